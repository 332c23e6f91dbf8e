#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "adreg/grid.hpp"
#include "adreg/losses.hpp"
#include "adreg/nn_ops.hpp"

namespace adreg {

/// Dual-output registration network: 3D encoder-decoder over a concatenated
/// image pair. The encoder stacks `levels` residual downsampling blocks with
/// channel widths n0 * 2^k; the decoder mirrors them with transpose
/// convolutions plus trilinear additive upsampling and summation skips.
/// Each of the levels+1 resolution levels emits a 3-channel displacement
/// summand, trilinearly upsampled to full resolution and summed into the
/// local DDF. A residual block branched from the deepest encoder feature
/// feeds a fully-connected head predicting 12 affine parameters,
/// initialized to the identity transform.
struct RegNetSpec {
  int n0 = 32;
  int levels = 4;
  std::array<std::int64_t, 3> input_shape{32, 32, 32};  // voxels (x, y, z)

  void validate() const;
  int channels(int level) const { return n0 << level; }
};

struct DiscNetSpec {
  int n0 = 32;
  int levels = 4;
  double leaky_slope = 0.2;
  std::array<std::int64_t, 3> input_shape{32, 32, 32};

  void validate() const;
  int channels(int level) const { return n0 << level; }
};

/// Named parameter tensors plus non-trainable buffers (batchnorm running
/// statistics), in fixed construction order.
struct ParamSet {
  std::vector<std::pair<std::string, Tensor>> params;
  std::vector<std::pair<std::string, Tensor>> buffers;
  std::uint64_t init_seed = 0;

  Tensor* find_param(const std::string& name);
  const Tensor* find_param(const std::string& name) const;
  Tensor* find_buffer(const std::string& name);
  const Tensor* find_buffer(const std::string& name) const;

  /// FNV-1a hash over every parameter byte, order-sensitive.
  std::uint64_t content_hash() const;
};

std::int64_t count_parameters(const ParamSet& ps);

/// Trainable leaves bound into a graph during one forward pass; the
/// optimizer reads gradients back through this map.
struct FwdBinding {
  std::unordered_map<std::string, Var> cache;
};

struct FwdCtx {
  Graph* g = nullptr;
  bool training = true;         // batch statistics vs running statistics
  bool update_running = false;  // fold batch stats into running stats
  FwdBinding* bind = nullptr;   // non-null: parameters become trainable leaves
};

struct RegOut {
  Var local;   // [N, 3, D, H, W]
  Var affine;  // [N, 12]
};

class RegNet {
 public:
  RegNetSpec spec;
  ParamSet params;

  static RegNet build(const RegNetSpec& spec, std::uint64_t seed);
  RegOut forward(FwdCtx ctx, Var moving, Var fixed);
};

class Discriminator {
 public:
  DiscNetSpec spec;
  ParamSet params;

  static Discriminator build(const DiscNetSpec& spec, std::uint64_t seed);
  Var forward(FwdCtx ctx, Var field);               // -> logits [N]
  DualVar forward_dual(FwdCtx ctx, DualVar field);  // tangent w.r.t. the input
  /// d(sum logits)/d(input), evaluated on a private graph with frozen
  /// parameters (batch statistics when training=true).
  Tensor input_gradient(const Tensor& batch, bool training);

  /// Hooks for the adversarial losses; all three closures share `ctx` (and
  /// its binding) so parameter gradients land on one set of leaves.
  DiscriminatorFns fns(FwdCtx ctx);
};

/// Simple named-tensor archive: a text header (metadata + tensor directory)
/// followed by a little-endian float64 payload; loaded by name lookup.
struct NamedArchive {
  std::vector<std::pair<std::string, std::string>> meta;
  std::vector<std::pair<std::string, Tensor>> tensors;

  void set_meta(const std::string& key, const std::string& value);
  const std::string* meta_value(const std::string& key) const;
  const Tensor* find(const std::string& name) const;

  void save(const std::string& path) const;
  static NamedArchive load(const std::string& path);
};

/// Pack/unpack a ParamSet under a name prefix ("reg." / "dis.").
void archive_paramset(NamedArchive& ar, const std::string& prefix, const ParamSet& ps);
ParamSet unarchive_paramset(const NamedArchive& ar, const std::string& prefix);

}  // namespace adreg
