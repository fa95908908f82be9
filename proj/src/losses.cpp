#include "srkd/losses.hpp"

#include "srkd/numerics.hpp"

#include <cmath>

namespace srkd {

void LossWeights::validate() const {
  for (double l : {lambda_kd, lambda_p, lambda_v, lambda_c, lambda_batch_gd})
    if (!(l >= 0.0) || !std::isfinite(l)) throw Error(ErrorKind::Config, "loss weights must be finite and >= 0");
  if (!(t_logit > 0.0) || !(t_gd > 0.0) || !std::isfinite(t_logit) || !std::isfinite(t_gd))
    throw Error(ErrorKind::Config, "temperatures must be positive and finite");
}

void to_json(nlohmann::json& j, const LossReport& r) {
  j = nlohmann::json{{"l_task", r.l_task},         {"l_kd", r.l_kd},         {"l_amra_p", r.l_amra_p},
                     {"l_amra_v", r.l_amra_v},     {"l_amra_c", r.l_amra_c}, {"l_batch_gd", r.l_batch_gd},
                     {"l_total", r.l_total}};
}

LossReport loss_total(LossReport c, const LossWeights& w) {
  w.validate();
  for (double v : {c.l_task, c.l_kd, c.l_amra_p, c.l_amra_v, c.l_amra_c, c.l_batch_gd})
    if (!std::isfinite(v)) throw Error(ErrorKind::Numeric, "loss_total: non-finite component");
  c.l_total = c.l_task + w.lambda_kd * c.l_kd + w.lambda_p * c.l_amra_p + w.lambda_v * c.l_amra_v +
              w.lambda_c * c.l_amra_c + w.lambda_batch_gd * c.l_batch_gd;
  return c;
}

SupervoxelView make_view(const ad::Var& features, const Supervoxel& sv) {
  return {ad::gather_rows(features, sv.point_rows), ad::group_mean(features, sv.voxel_groups), sv.point_mask,
          sv.voxel_mask, sv.weight};
}

namespace {

Matrix row_weights(const Mask& mask, Eigen::Index cols, double per_row) {
  Matrix w = Matrix::Zero(static_cast<Eigen::Index>(mask.size()), cols);
  for (std::size_t r = 0; r < mask.size(); ++r)
    if (mask[r]) w.row(static_cast<Eigen::Index>(r)).setConstant(per_row);
  return w;
}

void require_rows(const ad::Var& v, const Mask& mask, const char* op) {
  if (v.rows() != static_cast<Eigen::Index>(mask.size()))
    throw Error(ErrorKind::Shape, std::string(op) + ": mask length != rows");
}

void require_pairing(const std::vector<SupervoxelView>& s, const std::vector<SupervoxelView>& t, const char* op) {
  if (s.size() != t.size())
    throw Error(ErrorKind::Pairing, std::string(op) + ": student and teacher supervoxel counts differ");
  if (s.empty()) throw Error(ErrorKind::UndefinedLoss, std::string(op) + ": no supervoxels");
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i].point_mask != t[i].point_mask || s[i].voxel_mask != t[i].voxel_mask || s[i].weight != t[i].weight)
      throw Error(ErrorKind::Pairing, std::string(op) + ": supervoxel " + std::to_string(i) +
                                          " has mismatched masks or weights between student and teacher");
  }
}

ad::Var affinity_alignment(const std::vector<SupervoxelView>& student, const std::vector<SupervoxelView>& teacher,
                           bool voxels, const char* op) {
  require_pairing(student, teacher, op);
  ad::Var total;
  for (std::size_t i = 0; i < student.size(); ++i) {
    const Mask& mask = voxels ? student[i].voxel_mask : student[i].point_mask;
    const ad::Var& fs = voxels ? student[i].voxels : student[i].points;
    const ad::Var& ft = voxels ? teacher[i].voxels : teacher[i].points;
    const double n = static_cast<double>(count_valid(mask));
    if (n == 0.0) throw Error(ErrorKind::UndefinedLoss, std::string(op) + ": supervoxel without valid rows");
    const ad::Var ds = affinity(fs, mask, student[i].weight);
    // Teacher affinity enters as a constant on the student's tape.
    const ad::Var dt = fs.tape->constant(affinity(ft.value(), mask, teacher[i].weight));
    const ad::Var term = ad::scale(ad::sum(ad::square(ad::sub(ds, dt))), 1.0 / (n * n));
    total = i == 0 ? term : ad::add(total, term);
  }
  return ad::scale(total, 1.0 / static_cast<double>(student.size()));
}

// Per-direction KL over the rows of (scaled) similarity matrices.
// Returns the summed row KL and writes dKL/dX_s into grad.
// Sum over rows of KL(softmax(xs/T) || softmax(xt/T)); when grad is given,
// weight * d/dxs of that sum is written to it.
double rowwise_kl(const Matrix& xs, const Matrix& xt, double temperature, Matrix* grad, double weight = 1.0) {
  const Eigen::Index rows = xs.rows(), cols = xs.cols();
  const double inv_t = 1.0 / temperature;
  const double log_floor = std::log(kKlFloor);
  if (grad != nullptr) grad->resize(rows, cols);
  Eigen::Array<double, 1, Eigen::Dynamic> ls(cols), lt(cols), p(cols);
  double total = 0.0;
  for (Eigen::Index a = 0; a < rows; ++a) {
    ls = xs.row(a).array() * inv_t;
    lt = xt.row(a).array() * inv_t;
    ls -= ls.maxCoeff();
    lt -= lt.maxCoeff();
    p = ls.exp();
    const double zs = p.sum();
    p /= zs;
    ls -= std::log(zs);
    lt -= std::log(lt.exp().sum());
    ls -= lt.max(log_floor);  // ls now holds log p - log q
    const double kl = (p * ls).sum();
    total += kl;
    if (grad != nullptr) grad->row(a) = (p * (ls - kl) * (weight * inv_t)).matrix();
  }
  return total;
}

// Column-direction counterpart: softmax runs down each column. Works on the
// row-major storage directly with per-column running statistics, so no
// transposed copies are made. weight * gradient is added to grad; prob and
// diffs are scratch.
double colwise_kl(const Matrix& xs, const Matrix& xt, double temperature, Matrix* grad, double weight, Matrix& prob,
                  Matrix& diffs) {
  using RowArray = Eigen::Array<double, 1, Eigen::Dynamic>;
  const Eigen::Index rows = xs.rows(), cols = xs.cols();
  const double inv_t = 1.0 / temperature;
  const double log_floor = std::log(kKlFloor);
  RowArray max_s = xs.row(0).array(), max_t = xt.row(0).array();
  for (Eigen::Index a = 1; a < rows; ++a) {
    max_s = max_s.max(xs.row(a).array());
    max_t = max_t.max(xt.row(a).array());
  }
  RowArray z_s = RowArray::Zero(cols), z_t = RowArray::Zero(cols);
  prob.resize(rows, cols);
  for (Eigen::Index a = 0; a < rows; ++a) {
    prob.row(a) = ((xs.row(a).array() - max_s) * inv_t).exp().matrix();
    z_s += prob.row(a).array();
    z_t += ((xt.row(a).array() - max_t) * inv_t).exp();
  }
  const RowArray log_z_s = z_s.log(), log_z_t = z_t.log(), inv_z_s = z_s.inverse();
  RowArray kl = RowArray::Zero(cols), diff(cols);
  if (grad != nullptr) diffs.resize(rows, cols);
  for (Eigen::Index a = 0; a < rows; ++a) {
    diff = (xs.row(a).array() - max_s) * inv_t - log_z_s -
           ((xt.row(a).array() - max_t) * inv_t - log_z_t).max(log_floor);
    prob.row(a).array() *= inv_z_s;
    kl += prob.row(a).array() * diff;
    if (grad != nullptr) diffs.row(a) = diff.matrix();
  }
  if (grad != nullptr)
    for (Eigen::Index a = 0; a < rows; ++a)
      grad->row(a).array() += prob.row(a).array() * (diffs.row(a).array() - kl) * (weight * inv_t);
  return kl.sum();
}

Matrix compact_rows(const Matrix& m, const Mask& mask) {
  Matrix out(static_cast<Eigen::Index>(count_valid(mask)), m.cols());
  Eigen::Index k = 0;
  for (std::size_t r = 0; r < mask.size(); ++r)
    if (mask[r]) out.row(k++) = m.row(static_cast<Eigen::Index>(r));
  return out;
}

std::vector<int> valid_indices(const Mask& mask) {
  std::vector<int> idx;
  for (std::size_t r = 0; r < mask.size(); ++r)
    if (mask[r]) idx.push_back(static_cast<int>(r));
  return idx;
}

}  // namespace

ad::Var loss_task(const ad::Var& logits, std::span<const Label> labels, const Mask& mask) {
  require_rows(logits, mask, "loss_task");
  if (labels.size() != mask.size()) throw Error(ErrorKind::Shape, "loss_task: label count != rows");
  const Eigen::Index c = logits.cols();
  std::size_t n = 0;
  for (std::size_t r = 0; r < mask.size(); ++r) {
    if (!mask[r] || labels[r] == kIgnoreLabel) continue;
    if (labels[r] >= c) throw Error(ErrorKind::Data, "loss_task: label out of range at row " + std::to_string(r));
    ++n;
  }
  if (n == 0) throw Error(ErrorKind::UndefinedLoss, "loss_task: no labeled points");
  Matrix w = Matrix::Zero(logits.rows(), c);
  for (std::size_t r = 0; r < mask.size(); ++r)
    if (mask[r] && labels[r] != kIgnoreLabel) w(static_cast<Eigen::Index>(r), labels[r]) = -1.0 / static_cast<double>(n);
  return ad::weighted_sum(ad::log_softmax_rows(logits, 1.0), w);
}

ad::Var masked_kl_rows(const ad::Var& student_logits, const Matrix& teacher_logits, double temperature, const Mask& mask) {
  if (student_logits.rows() != teacher_logits.rows() || student_logits.cols() != teacher_logits.cols())
    throw Error(ErrorKind::Shape, "kl: student and teacher shapes differ");
  require_rows(student_logits, mask, "kl");
  const std::size_t n = count_valid(mask);
  if (n == 0) throw Error(ErrorKind::UndefinedLoss, "kl: no valid rows");
  ad::Tape& tape = *student_logits.tape;
  const Matrix logq = log_softmax_rows(teacher_logits, temperature).cwiseMax(std::log(kKlFloor));
  const ad::Var p = ad::softmax_rows(student_logits, temperature);
  const ad::Var logp = ad::log_softmax_rows(student_logits, temperature);
  const ad::Var per = ad::mul(p, ad::sub(logp, tape.constant(logq)));
  return ad::weighted_sum(per, row_weights(mask, per.cols(), 1.0 / static_cast<double>(n)));
}

ad::Var loss_kd(const ad::Var& student_logits, const Matrix& teacher_logits, double temperature, const Mask& mask) {
  return masked_kl_rows(student_logits, teacher_logits, temperature, mask);
}

ad::Var affinity(const ad::Var& features, const Mask& mask, double weight) {
  require_rows(features, mask, "affinity");
  if (features.rows() < 2) throw Error(ErrorKind::Shape, "affinity needs at least two rows");
  const auto n = static_cast<Eigen::Index>(mask.size());
  Matrix gate(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) gate(i, j) = (mask[static_cast<std::size_t>(i)] && mask[static_cast<std::size_t>(j)]) ? weight : 0.0;
  return ad::mul(ad::pairwise_sqdist(features), features.tape->constant(std::move(gate)));
}

ad::Var loss_amra_point(const std::vector<SupervoxelView>& student, const std::vector<SupervoxelView>& teacher) {
  return affinity_alignment(student, teacher, false, "loss_amra_point");
}

ad::Var loss_amra_voxel(const std::vector<SupervoxelView>& student, const std::vector<SupervoxelView>& teacher) {
  return affinity_alignment(student, teacher, true, "loss_amra_voxel");
}

ad::Var loss_amra_channel(const std::vector<SupervoxelView>& student, const std::vector<SupervoxelView>& teacher) {
  require_pairing(student, teacher, "loss_amra_channel");
  ad::Var total;
  for (std::size_t i = 0; i < student.size(); ++i) {
    if (student[i].points.cols() != teacher[i].points.cols())
      throw Error(ErrorKind::Shape, "loss_amra_channel: channel count mismatch (" +
                                        std::to_string(student[i].points.cols()) + " vs " +
                                        std::to_string(teacher[i].points.cols()) + ")");
    const ad::Var pts = masked_kl_rows(student[i].points, teacher[i].points.value(), 1.0, student[i].point_mask);
    const ad::Var vox = masked_kl_rows(student[i].voxels, teacher[i].voxels.value(), 1.0, student[i].voxel_mask);
    const ad::Var term = ad::add(pts, vox);
    total = i == 0 ? term : ad::add(total, term);
  }
  return ad::scale(total, 1.0 / static_cast<double>(student.size()));
}

ad::Var loss_batch_gd(const std::vector<ad::Var>& student_features, const std::vector<Matrix>& teacher_features,
                      const std::vector<Mask>& masks, double temperature) {
  const std::size_t b = student_features.size();
  if (b == 0) throw Error(ErrorKind::UndefinedLoss, "loss_batch_gd: empty batch");
  if (teacher_features.size() != b || masks.size() != b)
    throw Error(ErrorKind::Shape, "loss_batch_gd: batch sizes differ");
  if (!(temperature > 0.0)) throw Error(ErrorKind::Numeric, "loss_batch_gd: temperature must be positive");
  const Eigen::Index n_rows = student_features.front().rows();
  ad::Tape& tape = *student_features.front().tape;

  std::vector<ad::Var> s_norm;
  std::vector<Matrix> t_norm;
  std::vector<double> coef;
  for (std::size_t i = 0; i < b; ++i) {
    if (student_features[i].rows() != n_rows || teacher_features[i].rows() != n_rows)
      throw Error(ErrorKind::Shape, "loss_batch_gd: inconsistent N across the batch");
    require_rows(student_features[i], masks[i], "loss_batch_gd");
    const std::size_t n = count_valid(masks[i]);
    if (n == 0) throw Error(ErrorKind::UndefinedLoss, "loss_batch_gd: sample without valid rows");
    s_norm.push_back(ad::l2_normalize_rows(ad::gather_rows(student_features[i], valid_indices(masks[i]))));
    t_norm.push_back(l2_normalize_rows(compact_rows(teacher_features[i], masks[i])));
    coef.push_back(1.0 / (static_cast<double>(b * b) * static_cast<double>(n)));
  }

  // Each unordered pair shares one similarity product for both directions;
  // the gradient w.r.t. every normalized student map is accumulated as we go.
  double total = 0.0;
  const bool need_grad = tape.requires_grad(s_norm.front());
  std::vector<Matrix> d_norm;
  if (need_grad)
    for (const auto& v : s_norm) d_norm.push_back(Matrix::Zero(v.rows(), v.cols()));
  Matrix ms, mt, g, prob, diffs;
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = i; j < b; ++j) {
      const Matrix& si = s_norm[i].value();
      const Matrix& sj = s_norm[j].value();
      ms.noalias() = si * sj.transpose();
      mt.noalias() = t_norm[i] * t_norm[j].transpose();
      Matrix* grad = need_grad ? &g : nullptr;
      // Rows of M_ij are sample i's points; its columns are the rows of M_ji.
      total += coef[i] * rowwise_kl(ms, mt, temperature, grad, coef[i]);
      if (i != j) total += coef[j] * colwise_kl(ms, mt, temperature, grad, coef[j], prob, diffs);
      if (need_grad) {
        d_norm[i].noalias() += g * sj;
        d_norm[j].noalias() += g.transpose() * si;
      }
    }
  }

  Matrix value(1, 1);
  value(0, 0) = total;
  std::vector<int> ids;
  for (const auto& v : s_norm) ids.push_back(v.id);
  return tape.record(std::move(value), s_norm, [ids, d_norm = std::move(d_norm)](ad::Tape& t, int self) {
    const double up = t.upstream(self)(0, 0);
    for (std::size_t i = 0; i < ids.size(); ++i) t.accumulate(ids[i], up * d_norm[i]);
  });
}

// ---- value-only ------------------------------------------------------------

double loss_task(const Matrix& logits, std::span<const Label> labels, const Mask& mask) {
  ad::Tape tape;
  return loss_task(tape.constant(logits), labels, mask).scalar();
}

double loss_kd(const Matrix& student_logits, const Matrix& teacher_logits, double temperature, const Mask& mask) {
  ad::Tape tape;
  return loss_kd(tape.constant(student_logits), teacher_logits, temperature, mask).scalar();
}

Matrix affinity(const Matrix& features, const Mask& mask, double weight) {
  ad::Tape tape;
  return affinity(tape.constant(features), mask, weight).value();
}

namespace {

std::vector<SupervoxelView> constant_views(ad::Tape& tape, const std::vector<Supervoxel>& svs) {
  std::vector<SupervoxelView> out;
  for (const auto& sv : svs)
    out.push_back({tape.constant(sv.point_features), tape.constant(sv.voxel_features), sv.point_mask, sv.voxel_mask,
                   sv.weight});
  return out;
}

}  // namespace

double loss_amra_point(const std::vector<Supervoxel>& student, const std::vector<Supervoxel>& teacher) {
  ad::Tape tape;
  return loss_amra_point(constant_views(tape, student), constant_views(tape, teacher)).scalar();
}

double loss_amra_voxel(const std::vector<Supervoxel>& student, const std::vector<Supervoxel>& teacher) {
  ad::Tape tape;
  return loss_amra_voxel(constant_views(tape, student), constant_views(tape, teacher)).scalar();
}

double loss_amra_channel(const std::vector<Supervoxel>& student, const std::vector<Supervoxel>& teacher) {
  ad::Tape tape;
  return loss_amra_channel(constant_views(tape, student), constant_views(tape, teacher)).scalar();
}

Matrix cross_similarity(const Matrix& fi, const Matrix& fj) {
  if (fi.cols() != fj.cols()) throw Error(ErrorKind::Shape, "cross_similarity: feature widths differ");
  return fi * fj.transpose();
}

double loss_gd_pair(const Matrix& m_student, const Matrix& m_teacher, double temperature, const Mask& row_mask,
                    const Mask& col_mask) {
  if (m_student.rows() != m_teacher.rows() || m_student.cols() != m_teacher.cols())
    throw Error(ErrorKind::Shape, "loss_gd_pair: similarity shapes differ");
  if (static_cast<Eigen::Index>(row_mask.size()) != m_student.rows() ||
      static_cast<Eigen::Index>(col_mask.size()) != m_student.cols())
    throw Error(ErrorKind::Shape, "loss_gd_pair: mask sizes do not match the matrix");
  if (!(temperature > 0.0)) throw Error(ErrorKind::Numeric, "loss_gd_pair: temperature must be positive");
  const std::size_t n_rows = count_valid(row_mask);
  if (n_rows == 0 || count_valid(col_mask) == 0) throw Error(ErrorKind::UndefinedLoss, "loss_gd_pair: no valid rows");
  const Matrix ms = compact_rows(compact_rows(m_student, row_mask).transpose(), col_mask).transpose();
  const Matrix mt = compact_rows(compact_rows(m_teacher, row_mask).transpose(), col_mask).transpose();
  return rowwise_kl(ms, mt, temperature, nullptr) / static_cast<double>(n_rows);
}

double loss_batch_gd(const std::vector<Matrix>& student_features, const std::vector<Matrix>& teacher_features,
                     const std::vector<Mask>& masks, double temperature) {
  ad::Tape tape;
  std::vector<ad::Var> vars;
  for (const auto& f : student_features) vars.push_back(tape.constant(f));
  return loss_batch_gd(vars, teacher_features, masks, temperature).scalar();
}

}  // namespace srkd
