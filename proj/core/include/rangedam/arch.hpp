#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "rangedam/dam.hpp"
#include "rangedam/tensor.hpp"

namespace rangedam::arch {

enum class BlockKind { plain, depth_aware };

/// Which blocks of every stage become depth-aware.
enum class Placement { all, last_two, last_one };

struct BlockSpec {
  std::size_t channels = 0;
  std::size_t expansion = 4;
  BlockKind kind = BlockKind::plain;

  std::size_t width() const noexcept { return channels * expansion; }
};

struct StageSpec {
  std::vector<std::size_t> depths{3, 4, 6, 3};
  Placement placement = Placement::last_one;

  void validate() const;
};

using StageLayout = std::vector<std::vector<BlockSpec>>;

/// Block kinds per stage; trailing blocks become depth-aware per the
/// placement (clamped to the stage depth).
StageLayout build_stages(const StageSpec& spec, std::span<const std::size_t> channels);

/// Settings shared by every block of a model.
struct BlockOptions {
  dam::DamConfig dam;
  /// MLP hidden width of each DAM; 0 selects dam::default_hidden(4C).
  std::size_t dam_hidden = 0;
  double layer_scale_init = 1e-6;
  double ln_eps = 1e-6;

  std::size_t hidden_for(const BlockSpec& spec) const;
};

/// Learned parameters of one block (biases of a bias-free DAM excluded).
std::size_t param_count(const BlockSpec& spec, const BlockOptions& options);
/// Sum over every block of a layout.
std::size_t param_count(const StageLayout& layout, const BlockOptions& options);
/// Learned parameters of a DAM of `width` channels.
std::size_t dam_param_count(std::size_t width, std::size_t hidden, bool use_bias);

template <typename Real>
struct NamedTensor {
  std::string name;
  ad::Tensor<Real> value;

  friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

/// Ordered, named parameter list. Order is the binding order on a tape.
template <typename Real>
class ParamStore {
 public:
  std::size_t add(std::string name, ad::Tensor<Real> value);

  std::size_t size() const noexcept { return entries_.size(); }
  NamedTensor<Real>& operator[](std::size_t i) { return entries_[i]; }
  const NamedTensor<Real>& operator[](std::size_t i) const { return entries_[i]; }
  std::optional<std::size_t> find(const std::string& name) const;
  std::size_t total_elements() const;

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  /// One leaf per entry, in order.
  std::vector<ad::Var<Real>> bind(ad::Tape<Real>& tape, bool requires_grad = true) const;

  friend bool operator==(const ParamStore&, const ParamStore&) = default;

 private:
  std::vector<NamedTensor<Real>> entries_;
};

/// Number of store entries a block occupies.
std::size_t block_slot_count(BlockKind kind);

/// Appends one block's tensors as `<prefix>.dw`, `<prefix>.ln_g`, ... and
/// returns the index of the first. ConvNeXt init: U(+-1/sqrt(fan_in))
/// weights, zero biases, unit LN gain, LayerScale filled with
/// options.layer_scale_init.
template <typename Real>
std::size_t append_block_params(ParamStore<Real>& store, const std::string& prefix, const BlockSpec& spec,
                                const BlockOptions& options, std::mt19937_64& rng);

/// plain:       x + gamma * pw2(GELU(pw1(LN(dw7(x)))))
/// depth_aware: x + pw2(DAM(GELU(pw1(LN(dw7(x))))))   DAM at width 4C
///
/// `params` is the block's slice of bound leaves; `spe` the cached SPE
/// vector of the DAM (ignored by plain blocks).
template <typename Real>
ad::Var<Real> block_forward(const ad::Var<Real>& x, const BlockSpec& spec, const BlockOptions& options,
                            std::span<const ad::Var<Real>> params, std::span<const Real> spe);

/// Multi-stage segmentation network: pointwise stem, stages joined by 2x2
/// patch merging, and a per-stage pointwise head upsampled back to the input
/// resolution and summed.
struct ModelSpec {
  std::size_t in_channels = 5;
  std::size_t num_classes = 3;
  StageSpec stages{{2, 2}, Placement::last_one};
  std::vector<std::size_t> widths{8, 16};
  BlockOptions block;

  void validate() const;
};

template <typename Real>
class SegmentationModel {
 public:
  SegmentationModel(ModelSpec spec, std::uint64_t seed);

  const ModelSpec& spec() const noexcept { return spec_; }
  const StageLayout& layout() const noexcept { return layout_; }
  ParamStore<Real>& params() noexcept { return params_; }
  const ParamStore<Real>& params() const noexcept { return params_; }
  std::size_t dam_count() const;

  /// K x H x W logits for a C_in x H x W input; H and W must be divisible by
  /// 2^(stages - 1). `leaves` come from params().bind().
  ad::Var<Real> forward(const ad::Var<Real>& input, std::span<const ad::Var<Real>> leaves) const;
  /// Feature map after every stage (same leaves contract).
  std::vector<ad::Var<Real>> stage_features(const ad::Var<Real>& input, std::span<const ad::Var<Real>> leaves) const;

  ad::Tensor<Real> logits(const ad::Tensor<Real>& input) const;
  /// Argmax class per pixel.
  std::vector<std::uint16_t> predict(const ad::Tensor<Real>& input) const;

 private:
  struct BlockSlot {
    BlockSpec spec;
    std::size_t first = 0;
    std::vector<Real> spe;
  };
  struct StageSlots {
    std::optional<std::size_t> merge;  // patch-merge weight index (stages > 0)
    std::vector<BlockSlot> blocks;
    std::size_t head = 0;  // head weight index
  };

  ad::Var<Real> run_stage(const ad::Var<Real>& x, const StageSlots& stage, std::span<const ad::Var<Real>> leaves) const;

  ModelSpec spec_;
  StageLayout layout_;
  ParamStore<Real> params_;
  std::size_t stem_ = 0;
  std::vector<StageSlots> stages_;
};

/// "FMV3" checkpoint: u32 version, u32 count, then per tensor u32 name
/// length, name, u32 rank, u32 dims, float32 data. All little-endian.
void write_checkpoint(const ParamStore<float>& params, const std::filesystem::path& path);
ParamStore<float> read_checkpoint(const std::filesystem::path& path);
std::vector<std::uint8_t> encode_checkpoint(const ParamStore<float>& params);
ParamStore<float> decode_checkpoint(std::span<const std::uint8_t> bytes);

template <typename To, typename From>
ParamStore<To> convert(const ParamStore<From>& store) {
  ParamStore<To> out;
  for (const auto& e : store) out.add(e.name, ad::tensor_cast<To>(e.value));
  return out;
}

/// Copies values from `source` into `target` by name; every target entry
/// must be present with the same shape.
template <typename Real>
void load_into(ParamStore<Real>& target, const ParamStore<float>& source);

}  // namespace rangedam::arch
