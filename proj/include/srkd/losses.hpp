#pragma once

#include "srkd/autodiff.hpp"
#include "srkd/types.hpp"
#include "srkd/voxelizer.hpp"

#include <nlohmann/json.hpp>

#include <span>
#include <string>
#include <vector>

namespace srkd {

struct LossWeights {
  double lambda_kd = 0.3;
  double lambda_p = 0.001;
  double lambda_v = 0.001;
  double lambda_c = 1000.0;
  double lambda_batch_gd = 0.1;
  double t_logit = 2.0;
  double t_gd = 2.0;

  void validate() const;
  bool any_distillation() const {
    return lambda_kd != 0.0 || lambda_p != 0.0 || lambda_v != 0.0 || lambda_c != 0.0 || lambda_batch_gd != 0.0;
  }
};

struct LossReport {
  double l_task = 0.0;
  double l_kd = 0.0;
  double l_amra_p = 0.0;
  double l_amra_v = 0.0;
  double l_amra_c = 0.0;
  double l_batch_gd = 0.0;
  double l_total = 0.0;
};

void to_json(nlohmann::json& j, const LossReport& r);

// Fills l_total from the components: l_task + sum of lambda * term.
LossReport loss_total(LossReport components, const LossWeights& weights);

// One supervoxel seen through one model's features: fixed-size point and voxel
// blocks with their masks, and the supervoxel's sampling weight.
struct SupervoxelView {
  ad::Var points;
  ad::Var voxels;
  Mask point_mask;
  Mask voxel_mask;
  double weight = 0.0;
};

SupervoxelView make_view(const ad::Var& features, const Supervoxel& sv);

// ---- recorded (differentiable) losses --------------------------------------

// Mean over unmasked labeled rows of -log softmax(logits)[label].
ad::Var loss_task(const ad::Var& logits, std::span<const Label> labels, const Mask& mask);

// Mean over unmasked rows of KL(softmax(student/T) || softmax(teacher/T)).
ad::Var masked_kl_rows(const ad::Var& student_logits, const Matrix& teacher_logits, double temperature, const Mask& mask);
ad::Var loss_kd(const ad::Var& student_logits, const Matrix& teacher_logits, double temperature, const Mask& mask);

// w * squared distances between rows, with entries touching masked rows zeroed.
ad::Var affinity(const ad::Var& features, const Mask& mask, double weight);

ad::Var loss_amra_point(const std::vector<SupervoxelView>& student, const std::vector<SupervoxelView>& teacher);
ad::Var loss_amra_voxel(const std::vector<SupervoxelView>& student, const std::vector<SupervoxelView>& teacher);
// Student views must already be projected to the teacher channel count.
ad::Var loss_amra_channel(const std::vector<SupervoxelView>& student, const std::vector<SupervoxelView>& teacher);

// (1/B^2) sum over ordered sample pairs (i, j), self pairs included, of the
// row-wise KL between temperature-softmaxed cross-sample similarity rows.
// Features are the raw encoder outputs; invalid rows are dropped and the rest
// L2-normalized internally.
ad::Var loss_batch_gd(const std::vector<ad::Var>& student_features, const std::vector<Matrix>& teacher_features,
                      const std::vector<Mask>& masks, double temperature);

// ---- value-only entry points -----------------------------------------------

double loss_task(const Matrix& logits, std::span<const Label> labels, const Mask& mask);
double loss_kd(const Matrix& student_logits, const Matrix& teacher_logits, double temperature, const Mask& mask);
Matrix affinity(const Matrix& features, const Mask& mask, double weight);
double loss_amra_point(const std::vector<Supervoxel>& student, const std::vector<Supervoxel>& teacher);
double loss_amra_voxel(const std::vector<Supervoxel>& student, const std::vector<Supervoxel>& teacher);
double loss_amra_channel(const std::vector<Supervoxel>& student, const std::vector<Supervoxel>& teacher);

// M = F_i * F_j^T for row-normalized inputs.
Matrix cross_similarity(const Matrix& fi, const Matrix& fj);

// (1/N_valid) sum over valid rows of KL(softmax(M_s[a,:]/T) || softmax(M_t[a,:]/T)),
// softmax restricted to valid columns.
double loss_gd_pair(const Matrix& m_student, const Matrix& m_teacher, double temperature, const Mask& row_mask,
                    const Mask& col_mask);

double loss_batch_gd(const std::vector<Matrix>& student_features, const std::vector<Matrix>& teacher_features,
                     const std::vector<Mask>& masks, double temperature);

}  // namespace srkd
