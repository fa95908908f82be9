#pragma once

#include "srkd/autodiff.hpp"
#include "srkd/core.hpp"
#include "srkd/types.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace srkd {

// k nearest valid neighbors (self included) per valid row; padded rows get no neighbors.
using NeighborGraph = std::vector<std::vector<int>>;

NeighborGraph knn_graph(const Matrix& positions, const Mask& validity, std::size_t k);

struct EncoderSpec {
  // widths.front() is the per-point input width (3 + D_in), widths.back() the feature width.
  std::vector<std::size_t> widths;
  std::size_t knn = 8;
  std::size_t agg_rounds = 2;
  double position_scale = 0.25;  // positions are multiplied by this before the first layer

  std::size_t layers() const { return widths.size() - 1; }
  std::size_t out_dim() const { return widths.back(); }
  // Rows of layer l's weight: doubled after an aggregation round (concat of self and neighbor mean).
  std::size_t layer_input(std::size_t l) const;
  bool aggregates_after(std::size_t l) const { return l < agg_rounds && l + 1 < layers(); }
  void validate() const;
};

struct EncoderParams {
  EncoderSpec spec;
  std::vector<Matrix> weights;  // layer l: layer_input(l) x widths[l+1]
  std::vector<Matrix> biases;   // 1 x widths[l+1]

  std::size_t parameter_count() const;
};

struct HeadParams {
  Matrix weight;  // D x C
  Matrix bias;    // 1 x C
};

struct ProjectionParams {
  Matrix weight;  // D_student x D_teacher
  Matrix bias;    // 1 x D_teacher
};

struct SegModel {
  EncoderParams encoder;
  HeadParams head;
  std::optional<ProjectionParams> projection;

  std::size_t n_classes() const { return static_cast<std::size_t>(head.weight.cols()); }
  // Encoder and head only; the projection is a training-time adapter.
  std::size_t parameter_count() const;
};

// Ordered (name, storage) view used by the optimizer, the tape binding and checkpoints.
std::vector<std::pair<std::string, Matrix*>> named_parameters(SegModel& model);
std::vector<std::pair<std::string, const Matrix*>> named_parameters(const SegModel& model);

EncoderParams init_encoder(const EncoderSpec& spec, std::uint64_t seed);
HeadParams init_head(std::size_t in_dim, std::size_t n_classes, std::uint64_t seed);
SegModel init_model(const EncoderSpec& spec, std::size_t n_classes, std::uint64_t seed);

// Student widths are ceil(w / 2) for every layer but the input; the projection
// maps student features back to the teacher width.
EncoderSpec student_spec(const EncoderSpec& teacher);
std::pair<EncoderParams, ProjectionParams> make_student_from_teacher(const EncoderParams& teacher, std::uint64_t seed);
SegModel make_student_model(const SegModel& teacher, std::uint64_t seed);

// [position_scale * positions | features], padded rows zero.
Matrix encoder_input(const FixedSample& sample, const EncoderSpec& spec);

// Model parameters bound onto a tape. Frozen models are bound as constants.
struct BoundModel {
  std::vector<ad::Var> weights;
  std::vector<ad::Var> biases;
  ad::Var head_weight, head_bias;
  std::optional<ad::Var> proj_weight, proj_bias;
};

BoundModel bind_model(ad::Tape& tape, const SegModel& model, bool trainable);

ad::Var encoder_forward(const BoundModel& bound, const EncoderSpec& spec, const ad::Var& input, const NeighborGraph& graph,
                        const Mask& validity);
ad::Var head_forward(const ad::Var& head_weight, const ad::Var& head_bias, const ad::Var& features);
ad::Var project_channels(const ad::Var& proj_weight, const ad::Var& proj_bias, const ad::Var& features);

// Value-only conveniences.
Matrix encoder_forward(const SegModel& model, const FixedSample& sample, const NeighborGraph& graph);
Matrix head_forward(const HeadParams& head, const Matrix& features);
Matrix project_channels(const ProjectionParams& proj, const Matrix& features);

// Checkpoint: "SRKDCKPT1", u32 count, then per buffer u32 name length, name,
// u32 rows, u32 cols, rows*cols little-endian f64 in row-major order.
using NamedBuffers = std::vector<std::pair<std::string, Matrix>>;

std::string encode_checkpoint(const NamedBuffers& buffers);
NamedBuffers decode_checkpoint(const std::string& bytes);
void save_checkpoint(const SegModel& model, const std::filesystem::path& path);
// Shapes are validated against the architecture implied by spec and n_classes.
SegModel load_checkpoint(const std::filesystem::path& path, const EncoderSpec& spec, std::size_t n_classes,
                         bool expect_projection, std::optional<std::size_t> projection_out = std::nullopt);

}  // namespace srkd
