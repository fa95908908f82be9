#include "srkd/models.hpp"

#include "srkd/rng.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

namespace srkd {

NeighborGraph knn_graph(const Matrix& positions, const Mask& validity, std::size_t k) {
  if (static_cast<Eigen::Index>(validity.size()) != positions.rows())
    throw Error(ErrorKind::Shape, "knn_graph: mask length != rows");
  if (k < 1) throw Error(ErrorKind::Config, "knn_graph: k must be >= 1");
  std::vector<int> valid;
  for (std::size_t i = 0; i < validity.size(); ++i)
    if (validity[i]) valid.push_back(static_cast<int>(i));
  const std::size_t kk = std::min(k, valid.size());

  NeighborGraph graph(validity.size());
  std::vector<std::pair<double, int>> dist(valid.size());
  for (int i : valid) {
    for (std::size_t j = 0; j < valid.size(); ++j)
      dist[j] = {(positions.row(i) - positions.row(valid[j])).squaredNorm(), valid[j]};
    std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(kk), dist.end());
    auto& nbrs = graph[static_cast<std::size_t>(i)];
    nbrs.reserve(kk);
    for (std::size_t j = 0; j < kk; ++j) nbrs.push_back(dist[j].second);
  }
  return graph;
}

std::size_t EncoderSpec::layer_input(std::size_t l) const {
  return (l > 0 && aggregates_after(l - 1)) ? 2 * widths[l] : widths[l];
}

void EncoderSpec::validate() const {
  if (widths.size() < 2) throw Error(ErrorKind::Config, "encoder needs at least an input and an output width");
  for (auto w : widths)
    if (w < 1) throw Error(ErrorKind::Config, "encoder widths must be >= 1");
  if (knn < 1) throw Error(ErrorKind::Config, "encoder knn must be >= 1");
  if (!(position_scale > 0.0)) throw Error(ErrorKind::Config, "encoder position_scale must be positive");
}

std::size_t EncoderParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& w : weights) n += static_cast<std::size_t>(w.size());
  for (const auto& b : biases) n += static_cast<std::size_t>(b.size());
  return n;
}

std::size_t SegModel::parameter_count() const {
  return encoder.parameter_count() + static_cast<std::size_t>(head.weight.size() + head.bias.size());
}

namespace {

Matrix uniform_matrix(Eigen::Index rows, Eigen::Index cols, double bound, Rng& rng) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = rng.uniform(-bound, bound);
  return m;
}

}  // namespace

EncoderParams init_encoder(const EncoderSpec& spec, std::uint64_t seed) {
  spec.validate();
  EncoderParams p;
  p.spec = spec;
  Rng rng(seed);
  for (std::size_t l = 0; l < spec.layers(); ++l) {
    const auto fan_in = static_cast<Eigen::Index>(spec.layer_input(l));
    const auto fan_out = static_cast<Eigen::Index>(spec.widths[l + 1]);
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    p.weights.push_back(uniform_matrix(fan_in, fan_out, bound, rng));
    p.biases.push_back(uniform_matrix(1, fan_out, bound, rng));
  }
  return p;
}

HeadParams init_head(std::size_t in_dim, std::size_t n_classes, std::uint64_t seed) {
  Rng rng(seed);
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_dim));
  return {uniform_matrix(static_cast<Eigen::Index>(in_dim), static_cast<Eigen::Index>(n_classes), bound, rng),
          uniform_matrix(1, static_cast<Eigen::Index>(n_classes), bound, rng)};
}

SegModel init_model(const EncoderSpec& spec, std::size_t n_classes, std::uint64_t seed) {
  if (n_classes < 1) throw Error(ErrorKind::Config, "model needs at least one class");
  SegModel m;
  m.encoder = init_encoder(spec, derive_seed(seed, {1}));
  m.head = init_head(spec.out_dim(), n_classes, derive_seed(seed, {2}));
  return m;
}

EncoderSpec student_spec(const EncoderSpec& teacher) {
  EncoderSpec spec = teacher;
  for (std::size_t l = 1; l < spec.widths.size(); ++l) spec.widths[l] = (spec.widths[l] + 1) / 2;
  return spec;
}

std::pair<EncoderParams, ProjectionParams> make_student_from_teacher(const EncoderParams& teacher, std::uint64_t seed) {
  const EncoderSpec spec = student_spec(teacher.spec);
  EncoderParams student = init_encoder(spec, derive_seed(seed, {1}));

  const auto d_s = static_cast<Eigen::Index>(spec.out_dim());
  const auto d_t = static_cast<Eigen::Index>(teacher.spec.out_dim());
  Rng rng(derive_seed(seed, {3}));
  Matrix gauss(std::max(d_s, d_t), std::min(d_s, d_t));
  for (Eigen::Index i = 0; i < gauss.rows(); ++i)
    for (Eigen::Index j = 0; j < gauss.cols(); ++j) gauss(i, j) = rng.normal();
  const Eigen::HouseholderQR<Eigen::MatrixXd> qr(gauss);
  const Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(gauss.rows(), gauss.cols());
  ProjectionParams proj;
  // Orthonormal rows when d_s <= d_t, orthonormal columns otherwise.
  proj.weight = d_s <= d_t ? Matrix(q.transpose()) : Matrix(q);
  proj.bias = Matrix::Zero(1, d_t);
  return {std::move(student), std::move(proj)};
}

SegModel make_student_model(const SegModel& teacher, std::uint64_t seed) {
  auto [encoder, proj] = make_student_from_teacher(teacher.encoder, seed);
  SegModel m;
  m.head = init_head(encoder.spec.out_dim(), teacher.n_classes(), derive_seed(seed, {2}));
  m.encoder = std::move(encoder);
  m.projection = std::move(proj);
  return m;
}

std::vector<std::pair<std::string, Matrix*>> named_parameters(SegModel& model) {
  std::vector<std::pair<std::string, Matrix*>> out;
  for (std::size_t l = 0; l < model.encoder.weights.size(); ++l) {
    out.emplace_back("encoder.w" + std::to_string(l), &model.encoder.weights[l]);
    out.emplace_back("encoder.b" + std::to_string(l), &model.encoder.biases[l]);
  }
  out.emplace_back("head.w", &model.head.weight);
  out.emplace_back("head.b", &model.head.bias);
  if (model.projection) {
    out.emplace_back("proj.w", &model.projection->weight);
    out.emplace_back("proj.b", &model.projection->bias);
  }
  return out;
}

std::vector<std::pair<std::string, const Matrix*>> named_parameters(const SegModel& model) {
  std::vector<std::pair<std::string, const Matrix*>> out;
  for (auto& [name, ptr] : named_parameters(const_cast<SegModel&>(model))) out.emplace_back(name, ptr);
  return out;
}

Matrix encoder_input(const FixedSample& sample, const EncoderSpec& spec) {
  const Matrix& pos = sample.cloud.positions;
  const Matrix& feat = sample.cloud.features;
  if (static_cast<std::size_t>(3 + feat.cols()) != spec.widths.front())
    throw Error(ErrorKind::Shape, "encoder input width " + std::to_string(spec.widths.front()) + " != 3 + D_in (" +
                                      std::to_string(3 + feat.cols()) + ")");
  Matrix x(pos.rows(), 3 + feat.cols());
  x << pos * spec.position_scale, feat;
  for (std::size_t i = 0; i < sample.validity.size(); ++i)
    if (!sample.validity[i]) x.row(static_cast<Eigen::Index>(i)).setZero();
  return x;
}

BoundModel bind_model(ad::Tape& tape, const SegModel& model, bool trainable) {
  BoundModel b;
  auto bind = [&](const std::string& name, const Matrix& m) {
    return trainable ? tape.parameter(name, m) : tape.constant(m);
  };
  for (std::size_t l = 0; l < model.encoder.weights.size(); ++l) {
    b.weights.push_back(bind("encoder.w" + std::to_string(l), model.encoder.weights[l]));
    b.biases.push_back(bind("encoder.b" + std::to_string(l), model.encoder.biases[l]));
  }
  b.head_weight = bind("head.w", model.head.weight);
  b.head_bias = bind("head.b", model.head.bias);
  if (model.projection) {
    b.proj_weight = bind("proj.w", model.projection->weight);
    b.proj_bias = bind("proj.b", model.projection->bias);
  }
  return b;
}

ad::Var encoder_forward(const BoundModel& bound, const EncoderSpec& spec, const ad::Var& input, const NeighborGraph& graph,
                        const Mask& validity) {
  if (input.cols() != static_cast<Eigen::Index>(spec.widths.front()))
    throw Error(ErrorKind::Shape, "encoder_forward: input width mismatch");
  if (graph.size() != validity.size() || static_cast<Eigen::Index>(validity.size()) != input.rows())
    throw Error(ErrorKind::Shape, "encoder_forward: graph/mask size mismatch");
  ad::Var h = input;
  for (std::size_t l = 0; l < spec.layers(); ++l) {
    h = ad::tanh(ad::add_row(ad::matmul(h, bound.weights[l]), bound.biases[l]));
    if (spec.aggregates_after(l)) h = ad::concat_cols(h, ad::group_mean(h, graph));
  }
  return ad::mask_rows(h, validity);
}

ad::Var head_forward(const ad::Var& head_weight, const ad::Var& head_bias, const ad::Var& features) {
  if (features.cols() != head_weight.rows()) throw Error(ErrorKind::Shape, "head_forward: feature width mismatch");
  return ad::add_row(ad::matmul(features, head_weight), head_bias);
}

ad::Var project_channels(const ad::Var& proj_weight, const ad::Var& proj_bias, const ad::Var& features) {
  if (features.cols() != proj_weight.rows()) throw Error(ErrorKind::Shape, "project_channels: feature width mismatch");
  return ad::add_row(ad::matmul(features, proj_weight), proj_bias);
}

Matrix encoder_forward(const SegModel& model, const FixedSample& sample, const NeighborGraph& graph) {
  ad::Tape tape;
  const BoundModel bound = bind_model(tape, model, false);
  const ad::Var x = tape.constant(encoder_input(sample, model.encoder.spec));
  return encoder_forward(bound, model.encoder.spec, x, graph, sample.validity).value();
}

Matrix head_forward(const HeadParams& head, const Matrix& features) {
  if (features.cols() != head.weight.rows()) throw Error(ErrorKind::Shape, "head_forward: feature width mismatch");
  return (features * head.weight).rowwise() + head.bias.row(0);
}

Matrix project_channels(const ProjectionParams& proj, const Matrix& features) {
  if (features.cols() != proj.weight.rows()) throw Error(ErrorKind::Shape, "project_channels: feature width mismatch");
  return (features * proj.weight).rowwise() + proj.bias.row(0);
}

// ---- checkpoints ----------------------------------------------------------

namespace {

constexpr char kCkptMagic[] = "SRKDCKPT1";
constexpr std::size_t kCkptMagicLen = 9;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

void put_f64(std::string& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFFu));
}

std::uint64_t get_le(const std::string& bytes, std::size_t& pos, int width) {
  if (pos + static_cast<std::size_t>(width) > bytes.size()) throw Error(ErrorKind::Parse, "checkpoint truncated");
  std::uint64_t v = 0;
  for (int i = 0; i < width; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[pos + i])) << (8 * i);
  pos += static_cast<std::size_t>(width);
  return v;
}

}  // namespace

std::string encode_checkpoint(const NamedBuffers& buffers) {
  std::string out(kCkptMagic, kCkptMagicLen);
  put_u32(out, static_cast<std::uint32_t>(buffers.size()));
  for (const auto& [name, m] : buffers) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put_u32(out, static_cast<std::uint32_t>(m.rows()));
    put_u32(out, static_cast<std::uint32_t>(m.cols()));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j) put_f64(out, m(i, j));
  }
  return out;
}

NamedBuffers decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < kCkptMagicLen + 4 || bytes.compare(0, kCkptMagicLen, kCkptMagic) != 0)
    throw Error(ErrorKind::Parse, "not an SRKDCKPT1 checkpoint");
  std::size_t pos = kCkptMagicLen;
  const auto count = get_le(bytes, pos, 4);
  NamedBuffers out;
  for (std::uint64_t b = 0; b < count; ++b) {
    const auto len = get_le(bytes, pos, 4);
    if (pos + len > bytes.size()) throw Error(ErrorKind::Parse, "checkpoint truncated in buffer name");
    std::string name = bytes.substr(pos, len);
    pos += len;
    const auto rows = static_cast<Eigen::Index>(get_le(bytes, pos, 4));
    const auto cols = static_cast<Eigen::Index>(get_le(bytes, pos, 4));
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
      for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = std::bit_cast<double>(get_le(bytes, pos, 8));
    out.emplace_back(std::move(name), std::move(m));
  }
  if (pos != bytes.size()) throw Error(ErrorKind::Parse, "trailing bytes after checkpoint buffers");
  return out;
}

void save_checkpoint(const SegModel& model, const std::filesystem::path& path) {
  NamedBuffers buffers;
  for (const auto& [name, ptr] : named_parameters(model)) buffers.emplace_back(name, *ptr);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::Io, "cannot write checkpoint '" + path.string() + "'");
  const std::string bytes = encode_checkpoint(buffers);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

SegModel load_checkpoint(const std::filesystem::path& path, const EncoderSpec& spec, std::size_t n_classes,
                         bool expect_projection, std::optional<std::size_t> projection_out) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot read checkpoint '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  const NamedBuffers buffers = decode_checkpoint(ss.str());

  // Build a zero model of the expected architecture and fill it by name.
  SegModel model = init_model(spec, n_classes, 0);
  if (expect_projection) {
    const auto d_t = projection_out.value_or(spec.out_dim());
    model.projection = ProjectionParams{Matrix::Zero(static_cast<Eigen::Index>(spec.out_dim()), static_cast<Eigen::Index>(d_t)),
                                        Matrix::Zero(1, static_cast<Eigen::Index>(d_t))};
  }
  auto params = named_parameters(model);
  if (buffers.size() != params.size())
    throw Error(ErrorKind::Shape, "checkpoint '" + path.string() + "' has " + std::to_string(buffers.size()) +
                                      " buffers, architecture expects " + std::to_string(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& [name, m] = buffers[i];
    if (name != params[i].first)
      throw Error(ErrorKind::Shape, "checkpoint buffer " + std::to_string(i) + " is '" + name + "', expected '" +
                                        params[i].first + "'");
    if (m.rows() != params[i].second->rows() || m.cols() != params[i].second->cols())
      throw Error(ErrorKind::Shape, "checkpoint buffer '" + name + "' has shape " + std::to_string(m.rows()) + "x" +
                                        std::to_string(m.cols()) + ", expected " +
                                        std::to_string(params[i].second->rows()) + "x" +
                                        std::to_string(params[i].second->cols()));
    *params[i].second = m;
  }
  return model;
}

}  // namespace srkd
