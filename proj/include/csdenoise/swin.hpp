#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "csdenoise/ctensor.hpp"

namespace csd {

struct SwinConfig {
  int image_size = 512;
  int in_channels = 1;
  int patch_size = 4;
  int embed_dim = 96;  // C
  int window_size = 8; // M
  std::vector<int> depths = {2, 2, 2, 2};
  std::vector<int> heads = {3, 6, 12, 24};
  double mlp_ratio = 4.0;
  double drop_rate = 0.0;
  bool dropout_shared_mask = false;

  void validate() const;
  // window size clamped to the stage's spatial extent
  int stage_window(int stage) const;
  int stage_resolution(int stage) const;  // tokens per side at stage s
  int stage_channels(int stage) const;    // C * 2^s
};

// Named, ordered parameter registry; creation order defines checkpoint order.
class ParamStore {
 public:
  Var create(const std::string& name, RTensor init);
  const std::vector<Var>& all() const { return params_; }
  const Var* find(const std::string& name) const;
  int64_t count_scalars() const;
  void zero_grads();
  void load(const std::map<std::string, RTensor>& tensors);  // strict by name
  std::map<std::string, RTensor> dump() const;

 private:
  std::vector<Var> params_;
  std::map<std::string, size_t> index_;
};

// attention parameters of one block; the bias table is [(2m-1)^2, heads]
struct WindowAttentionWeights {
  Var qkv_w, qkv_b, proj_w, proj_b, rpb_table;
};

// Complex window attention over [batch, res*res, channels] tokens: cyclic
// shift by window/2 when `shifted` (masked so wrapped regions cannot attend
// across), M x M window partition, lifted qkv projection, complex q k^T /
// sqrt(d) with the (real) relative-position bias, lifted row softmax, complex
// product with v, merge, lifted output projection. `attn_out`, when given,
// receives the post-softmax attention [batch*windows, heads, m^2, m^2].
Var cwindow_attention(const Var& z, const WindowAttentionWeights& w, int batch, int res,
                      int channels, int heads, int window, bool shifted,
                      std::map<std::string, IndexMap>* idx_cache = nullptr,
                      std::map<std::string, CTensor>* mask_cache = nullptr,
                      Var* attn_out = nullptr);

// per-forward state: dropout RNG and training flag
struct ForwardContext {
  bool training = false;
  std::mt19937_64 rng{0};
};

// One transformer block: attention sub-layer with pre-norm and residual, then
// the five-layer complex MLP (linear, gelu, dropout, linear, dropout) with
// pre-norm and residual.
struct SwinBlockWeights {
  Var ln1_g, ln1_b, qkv_w, qkv_b, proj_w, proj_b, ln2_g, ln2_b;
  Var mlp_w1, mlp_b1, mlp_w2, mlp_b2;
  Var rpb_table;
  bool shifted = false;
};

Var swin_block(const Var& tokens, const SwinBlockWeights& blk, int batch, int res, int channels,
               int heads, int window, double drop_rate, bool shared_mask, ForwardContext& ctx,
               std::map<std::string, IndexMap>* idx_cache = nullptr,
               std::map<std::string, CTensor>* mask_cache = nullptr);

// Common contract of the two generator cores: complex image in, complex
// image of the same shape out.
class CoreModel {
 public:
  virtual ~CoreModel() = default;
  virtual Var forward(const Var& image, ForwardContext& ctx) = 0;
  virtual ParamStore& params() = 0;
  virtual const ParamStore& params() const = 0;
  virtual std::string kind() const = 0;

  Var forward_inference(const Var& image) {
    ForwardContext ctx;
    return forward(image, ctx);
  }
};

// Complex Swin encoder-decoder: patch embedding, 4 encoder stages with
// window / shifted-window complex attention pairs, patch merging between
// stages, the mirrored decoder with patch expanding, skip connections at
// /16, /8, /4, and a 4x expanding head back to the input resolution.
class SwinDenoiser : public CoreModel {
 public:
  SwinDenoiser(const SwinConfig& cfg, uint64_t seed);
  Var forward(const Var& image, ForwardContext& ctx) override;
  ParamStore& params() override { return params_; }
  const ParamStore& params() const override { return params_; }
  std::string kind() const override { return "swin"; }
  const SwinConfig& config() const { return cfg_; }

  // spatial side lengths seen by the shape-contract test, encoder then decoder
  std::vector<std::pair<int, int>> stage_trace() const;  // (resolution, channels)

 private:
  struct Stage {
    std::vector<SwinBlockWeights> blocks;
  };

  Stage make_stage(const std::string& prefix, int stage, std::mt19937_64& rng);

  SwinConfig cfg_;
  ParamStore params_;
  Var embed_w, embed_b, embed_ln_g, embed_ln_b;
  std::vector<Stage> enc_, dec_;
  std::vector<Var> merge_w_, merge_b_;            // 3 merges
  std::vector<Var> expand_w_, expand_b_;          // 3 expands (decoder)
  std::vector<Var> skip_w_, skip_b_;              // 3 skip fusions
  Var final_expand_w, final_expand_b, unembed_w, unembed_b;

  // cached index maps and attention masks, keyed by layout
  std::map<std::string, IndexMap> idx_cache_;
  std::map<std::string, CTensor> mask_cache_;
  IndexMap cached_idx(const std::string& key, const std::function<std::vector<int64_t>()>& make);
};

// Minimal 4-level complex U-Net with the same I/O contract (ablation core).
class ComplexUnet : public CoreModel {
 public:
  ComplexUnet(int in_channels, int base_channels, uint64_t seed);
  Var forward(const Var& image, ForwardContext& ctx) override;
  ParamStore& params() override { return params_; }
  const ParamStore& params() const override { return params_; }
  std::string kind() const override { return "unet"; }

 private:
  Var conv_block(const Var& x, const Var& w, const Var& b, int stride);
  int in_channels_, base_;
  ParamStore params_;
  std::vector<Var> w_, b_;  // creation order fixed in ctor
  std::map<std::string, IndexMap> idx_cache_;
};

}  // namespace csd
