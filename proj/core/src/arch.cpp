#include "rangedam/arch.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "rangedam/error.hpp"

namespace rangedam::arch {

using ad::Shape;
using ad::Tape;
using ad::Tensor;
using ad::Var;

namespace {

// Slot offsets inside a block's parameter slice.
enum Slot : std::size_t { kDw = 0, kLnG, kLnB, kPw1W, kPw1B, kPw2W, kPw2B, kTail };
constexpr std::size_t kLayerScale = kTail;
constexpr std::size_t kDamW1 = kTail, kDamB1 = kTail + 1, kDamW2 = kTail + 2, kDamB2 = kTail + 3;

constexpr std::uint32_t kCheckpointVersion = 1;
constexpr char kCheckpointMagic[4] = {'F', 'M', 'V', '3'};

template <typename Real>
Tensor<Real> uniform(Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
  Tensor<Real> t(shape);
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (Real& v : t.data) v = static_cast<Real>(dist(rng));
  return t;
}

}  // namespace

void StageSpec::validate() const {
  for (std::size_t d : depths)
    if (d == 0) throw PreconditionError("every stage needs at least one block");
}

StageLayout build_stages(const StageSpec& spec, std::span<const std::size_t> channels) {
  spec.validate();
  if (channels.size() != spec.depths.size())
    throw ShapeError("build_stages: " + std::to_string(channels.size()) + " widths for " +
                     std::to_string(spec.depths.size()) + " stages");
  StageLayout layout;
  for (std::size_t s = 0; s < spec.depths.size(); ++s) {
    const std::size_t depth = spec.depths[s];
    std::size_t replaced = depth;
    if (spec.placement == Placement::last_two) replaced = std::min<std::size_t>(2, depth);
    if (spec.placement == Placement::last_one) replaced = 1;
    std::vector<BlockSpec> stage(depth, BlockSpec{channels[s], 4, BlockKind::plain});
    for (std::size_t b = depth - replaced; b < depth; ++b) stage[b].kind = BlockKind::depth_aware;
    layout.push_back(std::move(stage));
  }
  return layout;
}

std::size_t BlockOptions::hidden_for(const BlockSpec& spec) const {
  return dam_hidden ? dam_hidden : dam::default_hidden(spec.width());
}

std::size_t dam_param_count(std::size_t width, std::size_t hidden, bool use_bias) {
  return 2 * width * hidden + (use_bias ? hidden + width : 0);
}

std::size_t param_count(const BlockSpec& spec, const BlockOptions& options) {
  const std::size_t c = spec.channels, w = spec.width();
  std::size_t n = 49 * c + 2 * c + (w * c + w) + (c * w + c);
  if (spec.kind == BlockKind::plain)
    n += c;
  else
    n += dam_param_count(w, options.hidden_for(spec), options.dam.use_bias);
  return n;
}

std::size_t param_count(const StageLayout& layout, const BlockOptions& options) {
  std::size_t n = 0;
  for (const auto& stage : layout)
    for (const auto& block : stage) n += param_count(block, options);
  return n;
}

std::size_t block_slot_count(BlockKind kind) { return kind == BlockKind::plain ? kTail + 1 : kTail + 4; }

template <typename Real>
std::size_t ParamStore<Real>::add(std::string name, Tensor<Real> value) {
  if (find(name)) throw PreconditionError("duplicate parameter name " + name);
  entries_.push_back({std::move(name), std::move(value)});
  return entries_.size() - 1;
}

template <typename Real>
std::optional<std::size_t> ParamStore<Real>::find(const std::string& name) const {
  for (std::size_t i = 0; i < entries_.size(); ++i)
    if (entries_[i].name == name) return i;
  return std::nullopt;
}

template <typename Real>
std::size_t ParamStore<Real>::total_elements() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.value.numel();
  return n;
}

template <typename Real>
std::vector<Var<Real>> ParamStore<Real>::bind(Tape<Real>& tape, bool requires_grad) const {
  std::vector<Var<Real>> leaves;
  leaves.reserve(entries_.size());
  for (const auto& e : entries_) leaves.push_back(tape.leaf(e.value, requires_grad));
  return leaves;
}

template <typename Real>
std::size_t append_block_params(ParamStore<Real>& store, const std::string& prefix, const BlockSpec& spec,
                                const BlockOptions& options, std::mt19937_64& rng) {
  const std::size_t c = spec.channels, w = spec.width();
  if (c == 0 || spec.expansion == 0) throw PreconditionError("block needs C >= 1");
  const std::size_t first = store.add(prefix + ".dw", uniform<Real>(Shape{c, 7, 7}, 49, rng));
  store.add(prefix + ".ln_g", Tensor<Real>::filled(Shape{c}, Real(1)));
  store.add(prefix + ".ln_b", Tensor<Real>(Shape{c}));
  store.add(prefix + ".pw1_w", uniform<Real>(Shape{w, c}, c, rng));
  store.add(prefix + ".pw1_b", Tensor<Real>(Shape{w}));
  store.add(prefix + ".pw2_w", uniform<Real>(Shape{c, w}, w, rng));
  store.add(prefix + ".pw2_b", Tensor<Real>(Shape{c}));
  if (spec.kind == BlockKind::plain) {
    store.add(prefix + ".ls_gamma", Tensor<Real>::filled(Shape{c}, static_cast<Real>(options.layer_scale_init)));
  } else {
    auto p = dam::init_dam_params<Real>(w, options.hidden_for(spec), options.dam, rng);
    store.add(prefix + ".dam_w1", std::move(p.w1));
    store.add(prefix + ".dam_b1", std::move(p.b1));
    store.add(prefix + ".dam_w2", std::move(p.w2));
    store.add(prefix + ".dam_b2", std::move(p.b2));
  }
  return first;
}

template <typename Real>
Var<Real> block_forward(const Var<Real>& x, const BlockSpec& spec, const BlockOptions& options,
                        std::span<const Var<Real>> params, std::span<const Real> spe) {
  if (params.size() != block_slot_count(spec.kind))
    throw ShapeError("block_forward: expected " + std::to_string(block_slot_count(spec.kind)) + " parameter tensors");
  if (x.shape().rank() != 3 || x.shape()[0] != spec.channels)
    throw ShapeError("block_forward: input " + x.shape().str() + " does not have " + std::to_string(spec.channels) +
                     " channels");
  Var<Real> h = ad::depthwise_conv7(x, params[kDw]);
  h = ad::layer_norm(h, params[kLnG], params[kLnB], static_cast<Real>(options.ln_eps));
  h = ad::gelu(ad::pointwise_conv(h, params[kPw1W], params[kPw1B]));
  if (spec.kind == BlockKind::depth_aware) {
    const dam::DamLeaves<Real> w{params[kDamW1], params[kDamB1], params[kDamW2], params[kDamB2]};
    h = dam::dam_forward(h, w, options.dam, spe);
  }
  h = ad::pointwise_conv(h, params[kPw2W], params[kPw2B]);
  if (spec.kind == BlockKind::plain) h = ad::scale_broadcast(h, params[kLayerScale]);
  return ad::add(x, h);
}

void ModelSpec::validate() const {
  stages.validate();
  if (widths.size() != stages.depths.size()) throw ShapeError("model needs one width per stage");
  if (in_channels == 0 || num_classes < 2) throw PreconditionError("model needs C_in >= 1 and >= 2 classes");
  for (std::size_t w : widths)
    if (w == 0) throw PreconditionError("stage width must be >= 1");
}

template <typename Real>
SegmentationModel<Real>::SegmentationModel(ModelSpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
  spec_.validate();
  layout_ = build_stages(spec_.stages, spec_.widths);
  std::mt19937_64 rng(seed);
  const auto& widths = spec_.widths;
  stem_ = params_.add("stem.w", uniform<Real>(Shape{widths[0], spec_.in_channels}, spec_.in_channels, rng));
  params_.add("stem.b", Tensor<Real>(Shape{widths[0]}));
  for (std::size_t s = 0; s < layout_.size(); ++s) {
    StageSlots slots;
    const std::string stage = "s" + std::to_string(s);
    if (s > 0) {
      slots.merge = params_.add(stage + ".merge_w", uniform<Real>(Shape{widths[s], 4 * widths[s - 1]}, 4 * widths[s - 1], rng));
      params_.add(stage + ".merge_b", Tensor<Real>(Shape{widths[s]}));
    }
    for (std::size_t b = 0; b < layout_[s].size(); ++b) {
      const BlockSpec& bs = layout_[s][b];
      BlockSlot slot{bs, append_block_params(params_, stage + ".b" + std::to_string(b), bs, spec_.block, rng), {}};
      if (bs.kind == BlockKind::depth_aware) {
        dam::SpeConfig spe{spec_.block.dam.spe_dim, bs.width(), 10000.0, spec_.block.dam.spe_alternating};
        slot.spe = dam::spe_as<Real>(spe);
      }
      slots.blocks.push_back(std::move(slot));
    }
    slots.head = params_.add(stage + ".head_w", uniform<Real>(Shape{spec_.num_classes, widths[s]}, widths[s], rng));
    params_.add(stage + ".head_b", Tensor<Real>(Shape{spec_.num_classes}));
    stages_.push_back(std::move(slots));
  }
}

template <typename Real>
std::size_t SegmentationModel<Real>::dam_count() const {
  std::size_t n = 0;
  for (const auto& stage : layout_)
    n += static_cast<std::size_t>(std::count_if(stage.begin(), stage.end(),
                                                [](const BlockSpec& b) { return b.kind == BlockKind::depth_aware; }));
  return n;
}

template <typename Real>
Var<Real> SegmentationModel<Real>::run_stage(const Var<Real>& x, const StageSlots& stage,
                                             std::span<const Var<Real>> leaves) const {
  Var<Real> h = x;
  if (stage.merge) h = ad::patch_merge2x2(h, leaves[*stage.merge], leaves[*stage.merge + 1]);
  for (const auto& block : stage.blocks)
    h = block_forward(h, block.spec, spec_.block, leaves.subspan(block.first, block_slot_count(block.spec.kind)),
                      std::span<const Real>(block.spe));
  return h;
}

template <typename Real>
std::vector<Var<Real>> SegmentationModel<Real>::stage_features(const Var<Real>& input,
                                                                std::span<const Var<Real>> leaves) const {
  if (leaves.size() != params_.size()) throw ShapeError("model forward: wrong number of bound parameters");
  if (input.shape().rank() != 3 || input.shape()[0] != spec_.in_channels)
    throw ShapeError("model forward: input " + input.shape().str() + " does not have " +
                     std::to_string(spec_.in_channels) + " channels");
  const std::size_t factor = std::size_t{1} << (stages_.size() - 1);
  if (input.shape()[1] % factor != 0 || input.shape()[2] % factor != 0 || input.shape()[1] == 0 ||
      input.shape()[2] == 0)
    throw ShapeError("model forward: spatial extent must be a non-zero multiple of " + std::to_string(factor));
  std::vector<Var<Real>> features;
  Var<Real> h = ad::pointwise_conv(input, leaves[stem_], leaves[stem_ + 1]);
  for (const auto& stage : stages_) {
    h = run_stage(h, stage, leaves);
    features.push_back(h);
  }
  return features;
}

template <typename Real>
Var<Real> SegmentationModel<Real>::forward(const Var<Real>& input, std::span<const Var<Real>> leaves) const {
  const auto features = stage_features(input, leaves);
  Var<Real> logits;
  for (std::size_t s = 0; s < stages_.size(); ++s) {
    Var<Real> head = ad::pointwise_conv(features[s], leaves[stages_[s].head], leaves[stages_[s].head + 1]);
    for (std::size_t k = 0; k < s; ++k) head = ad::upsample_nearest2x(head);
    logits = s == 0 ? head : ad::add(logits, head);
  }
  return logits;
}

template <typename Real>
Tensor<Real> SegmentationModel<Real>::logits(const Tensor<Real>& input) const {
  Tape<Real> tape;
  const auto leaves = params_.bind(tape, false);
  return forward(tape.constant(input), leaves).value();
}

template <typename Real>
std::vector<std::uint16_t> SegmentationModel<Real>::predict(const Tensor<Real>& input) const {
  const Tensor<Real> out = logits(input);
  const std::size_t classes = out.shape[0], plane = out.shape[1] * out.shape[2];
  std::vector<std::uint16_t> labels(plane, 0);
  for (std::size_t p = 0; p < plane; ++p) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < classes; ++k)
      if (out[k * plane + p] > out[best * plane + p]) best = k;
    labels[p] = static_cast<std::uint16_t>(best);
  }
  return labels;
}

template <typename Real>
void load_into(ParamStore<Real>& target, const ParamStore<float>& source) {
  for (auto& entry : target) {
    const auto idx = source.find(entry.name);
    if (!idx) throw FormatError("checkpoint lacks parameter " + entry.name);
    const auto& src = source[*idx].value;
    if (src.shape != entry.value.shape)
      throw ShapeError("checkpoint parameter " + entry.name + " has shape " + src.shape.str() + ", expected " +
                       entry.value.shape.str());
    entry.value = ad::tensor_cast<Real>(src);
  }
}

// ---------------------------------------------------------------------------
// Checkpoint container.

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}
  const std::uint8_t* take(std::size_t n) {
    if (bytes_.size() - pos_ < n) throw FormatError("checkpoint truncated");
    const auto* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::uint32_t u32() {
    const auto* p = take(4);
    return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
           static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const ParamStore<float>& params) {
  std::vector<std::uint8_t> out(std::begin(kCheckpointMagic), std::end(kCheckpointMagic));
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& e : params) {
    put_u32(out, static_cast<std::uint32_t>(e.name.size()));
    out.insert(out.end(), e.name.begin(), e.name.end());
    put_u32(out, static_cast<std::uint32_t>(e.value.shape.rank()));
    for (std::size_t d : e.value.shape.dims()) put_u32(out, static_cast<std::uint32_t>(d));
    for (float v : e.value.data) put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

ParamStore<float> decode_checkpoint(std::span<const std::uint8_t> bytes) {
  ByteReader rd(bytes);
  if (std::memcmp(rd.take(4), kCheckpointMagic, 4) != 0) throw FormatError("bad checkpoint magic");
  if (const auto version = rd.u32(); version != kCheckpointVersion)
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  const std::uint32_t count = rd.u32();
  ParamStore<float> store;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t len = rd.u32();
    const auto* name = rd.take(len);
    const std::uint32_t rank = rd.u32();
    if (rank < 1 || rank > 3) throw FormatError("checkpoint tensor rank " + std::to_string(rank));
    std::uint32_t dims[3] = {0, 0, 0};
    for (std::uint32_t r = 0; r < rank; ++r) dims[r] = rd.u32();
    const Shape shape = rank == 1 ? Shape{dims[0]} : rank == 2 ? Shape{dims[0], dims[1]} : Shape{dims[0], dims[1], dims[2]};
    if (shape.numel() > rd.remaining() / 4) throw FormatError("checkpoint truncated");
    std::vector<float> data(shape.numel());
    const auto* p = rd.take(4 * data.size());
    for (std::size_t k = 0; k < data.size(); ++k) {
      const std::uint32_t bits = static_cast<std::uint32_t>(p[4 * k]) | static_cast<std::uint32_t>(p[4 * k + 1]) << 8 |
                                 static_cast<std::uint32_t>(p[4 * k + 2]) << 16 |
                                 static_cast<std::uint32_t>(p[4 * k + 3]) << 24;
      data[k] = std::bit_cast<float>(bits);
      if (!std::isfinite(data[k])) throw FormatError("non-finite value in checkpoint");
    }
    store.add(std::string(reinterpret_cast<const char*>(name), len), Tensor<float>(shape, std::move(data)));
  }
  if (rd.remaining() != 0) throw FormatError("trailing bytes after checkpoint");
  return store;
}

void write_checkpoint(const ParamStore<float>& params, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(params);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

ParamStore<float> read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

#define RANGEDAM_INSTANTIATE_ARCH(R)                                                                        \
  template class ParamStore<R>;                                                                             \
  template std::size_t append_block_params(ParamStore<R>&, const std::string&, const BlockSpec&,            \
                                           const BlockOptions&, std::mt19937_64&);                          \
  template Var<R> block_forward(const Var<R>&, const BlockSpec&, const BlockOptions&, std::span<const Var<R>>, \
                                std::span<const R>);                                                        \
  template class SegmentationModel<R>;                                                                      \
  template void load_into(ParamStore<R>&, const ParamStore<float>&);

RANGEDAM_INSTANTIATE_ARCH(float)
RANGEDAM_INSTANTIATE_ARCH(double)

#undef RANGEDAM_INSTANTIATE_ARCH

}  // namespace rangedam::arch
