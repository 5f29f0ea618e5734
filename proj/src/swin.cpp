#include <cmath>
#include <functional>

#include "csdenoise/swin.hpp"

namespace csd {

namespace {

constexpr double kInitSigma = 0.02;
constexpr double kMaskValue = -1e9;

int64_t idx4(int64_t a, int64_t b, int64_t c, int64_t d, int64_t B, int64_t C, int64_t D) {
  return ((a * B + b) * C + c) * D + d;
}

}  // namespace

// ---------------------------------------------------------------------------
// SwinConfig
// ---------------------------------------------------------------------------

void SwinConfig::validate() const {
  if (patch_size != 4) throw ValueError("swin: patch_size must be 4");
  if (image_size % 32 != 0)
    throw ValueError("swin: image_size must be a multiple of 32, got " +
                     std::to_string(image_size));
  if (depths.size() != 4 || heads.size() != 4)
    throw ValueError("swin: need 4 stage depths and 4 head counts");
  if (in_channels < 1) throw ValueError("swin: in_channels must be >= 1");
  if (embed_dim < 1 || window_size < 1) throw ValueError("swin: bad embed_dim/window_size");
  for (int s = 0; s < 4; ++s) {
    if (depths[s] < 1 || depths[s] % 2 != 0)
      throw ValueError("swin: stage depths must be positive and even (W/SW pairs)");
    const int r = stage_resolution(s);
    const int m = stage_window(s);
    if (r % m != 0)
      throw ValueError("swin: stage " + std::to_string(s) + " resolution " + std::to_string(r) +
                       " not divisible by window " + std::to_string(m));
    const int c = stage_channels(s);
    if (c % heads[s] != 0)
      throw ValueError("swin: stage " + std::to_string(s) + " channels " + std::to_string(c) +
                       " not divisible by heads " + std::to_string(heads[s]));
  }
}

int SwinConfig::stage_resolution(int stage) const {
  return image_size / patch_size / (1 << stage);
}

int SwinConfig::stage_window(int stage) const {
  return std::min(window_size, stage_resolution(stage));
}

int SwinConfig::stage_channels(int stage) const { return embed_dim * (1 << stage); }

// ---------------------------------------------------------------------------
// ParamStore
// ---------------------------------------------------------------------------

Var ParamStore::create(const std::string& name, RTensor init) {
  if (index_.count(name)) throw ValueError("duplicate parameter '" + name + "'");
  index_[name] = params_.size();
  params_.push_back(Var::parameter(CTensor::real(std::move(init)), name));
  return params_.back();
}

const Var* ParamStore::find(const std::string& name) const {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : &params_[it->second];
}

void ParamStore::zero_grads() {
  for (auto& p : params_) p.zero_grad();
}

int64_t ParamStore::count_scalars() const {
  int64_t n = 0;
  for (const auto& p : params_) n += p.numel();
  return n;
}

void ParamStore::load(const std::map<std::string, RTensor>& tensors) {
  for (auto& p : params_) {
    auto it = tensors.find(p.name());
    if (it == tensors.end()) throw ValueError("checkpoint missing parameter '" + p.name() + "'");
    if (it->second.shape != p.shape())
      throw ShapeError("checkpoint parameter '" + p.name() + "' has shape " +
                       shape_str(it->second.shape) + ", expected " + shape_str(p.shape()));
    p.node()->value.re = it->second;
    for (auto& v : p.node()->value.im.data) v = 0.0;
  }
}

std::map<std::string, RTensor> ParamStore::dump() const {
  std::map<std::string, RTensor> out;
  for (const auto& p : params_) out.emplace(p.name(), p.value().re);
  return out;
}

// ---------------------------------------------------------------------------
// SwinDenoiser
// ---------------------------------------------------------------------------

SwinDenoiser::SwinDenoiser(const SwinConfig& cfg, uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  std::mt19937_64 rng(seed);
  const int p2c = cfg_.patch_size * cfg_.patch_size * cfg_.in_channels;
  const int c0 = cfg_.embed_dim;

  embed_w = params_.create("embed.w", trunc_normal(Shape{c0, p2c}, rng, kInitSigma));
  embed_b = params_.create("embed.b", RTensor::zeros(Shape{c0}));
  embed_ln_g = params_.create("embed.ln.g", RTensor::full(Shape{c0}, 1.0));
  embed_ln_b = params_.create("embed.ln.b", RTensor::zeros(Shape{c0}));

  for (int s = 0; s < 4; ++s) {
    enc_.push_back(make_stage("enc" + std::to_string(s), s, rng));
    if (s < 3) {
      const int cs = cfg_.stage_channels(s);
      merge_w_.push_back(params_.create("merge" + std::to_string(s) + ".w",
                                        trunc_normal(Shape{2 * cs, 4 * cs}, rng, kInitSigma)));
      merge_b_.push_back(
          params_.create("merge" + std::to_string(s) + ".b", RTensor::zeros(Shape{2 * cs})));
    }
  }
  for (int s = 3; s >= 0; --s)
    dec_.insert(dec_.begin(), make_stage("dec" + std::to_string(s), s, rng));
  // expand s+1 -> s and skip fusion at stage s, for s = 2, 1, 0
  expand_w_.resize(3);
  expand_b_.resize(3);
  skip_w_.resize(3);
  skip_b_.resize(3);
  for (int s = 2; s >= 0; --s) {
    const int ci = cfg_.stage_channels(s + 1);
    const int cs = cfg_.stage_channels(s);
    expand_w_[s] = params_.create("expand" + std::to_string(s) + ".w",
                                  trunc_normal(Shape{2 * ci, ci}, rng, kInitSigma));
    expand_b_[s] =
        params_.create("expand" + std::to_string(s) + ".b", RTensor::zeros(Shape{2 * ci}));
    skip_w_[s] = params_.create("skip" + std::to_string(s) + ".w",
                                trunc_normal(Shape{cs, 2 * cs}, rng, kInitSigma));
    skip_b_[s] = params_.create("skip" + std::to_string(s) + ".b", RTensor::zeros(Shape{cs}));
  }
  const int pexp = cfg_.patch_size * cfg_.patch_size;
  final_expand_w =
      params_.create("head.expand.w", trunc_normal(Shape{pexp * c0, c0}, rng, kInitSigma));
  final_expand_b = params_.create("head.expand.b", RTensor::zeros(Shape{pexp * c0}));
  unembed_w = params_.create("head.unembed.w",
                             trunc_normal(Shape{cfg_.in_channels, c0}, rng, kInitSigma));
  unembed_b = params_.create("head.unembed.b", RTensor::zeros(Shape{cfg_.in_channels}));
}

SwinDenoiser::Stage SwinDenoiser::make_stage(const std::string& prefix, int stage,
                                             std::mt19937_64& rng) {
  Stage st;
  const int c = cfg_.stage_channels(stage);
  const int m = cfg_.stage_window(stage);
  const int nh = cfg_.heads[stage];
  const int hidden = static_cast<int>(std::lround(cfg_.mlp_ratio * c));
  for (int b = 0; b < cfg_.depths[stage]; ++b) {
    const std::string pre = prefix + ".blk" + std::to_string(b) + ".";
    SwinBlockWeights blk;
    blk.shifted = (b % 2 == 1);
    blk.ln1_g = params_.create(pre + "ln1.g", RTensor::full(Shape{c}, 1.0));
    blk.ln1_b = params_.create(pre + "ln1.b", RTensor::zeros(Shape{c}));
    blk.qkv_w = params_.create(pre + "qkv.w", trunc_normal(Shape{3 * c, c}, rng, kInitSigma));
    blk.qkv_b = params_.create(pre + "qkv.b", RTensor::zeros(Shape{3 * c}));
    blk.rpb_table = params_.create(
        pre + "rpb", trunc_normal(Shape{(2 * m - 1) * (2 * m - 1), nh}, rng, kInitSigma));
    blk.proj_w = params_.create(pre + "proj.w", trunc_normal(Shape{c, c}, rng, kInitSigma));
    blk.proj_b = params_.create(pre + "proj.b", RTensor::zeros(Shape{c}));
    blk.ln2_g = params_.create(pre + "ln2.g", RTensor::full(Shape{c}, 1.0));
    blk.ln2_b = params_.create(pre + "ln2.b", RTensor::zeros(Shape{c}));
    blk.mlp_w1 = params_.create(pre + "mlp.w1", trunc_normal(Shape{hidden, c}, rng, kInitSigma));
    blk.mlp_b1 = params_.create(pre + "mlp.b1", RTensor::zeros(Shape{hidden}));
    blk.mlp_w2 = params_.create(pre + "mlp.w2", trunc_normal(Shape{c, hidden}, rng, kInitSigma));
    blk.mlp_b2 = params_.create(pre + "mlp.b2", RTensor::zeros(Shape{c}));
    st.blocks.push_back(std::move(blk));
  }
  return st;
}

IndexMap SwinDenoiser::cached_idx(const std::string& key,
                                  const std::function<std::vector<int64_t>()>& make) {
  auto it = idx_cache_.find(key);
  if (it != idx_cache_.end()) return it->second;
  auto idx = std::make_shared<const std::vector<int64_t>>(make());
  idx_cache_.emplace(key, idx);
  return idx;
}

Var cwindow_attention(const Var& x, const WindowAttentionWeights& w, int batch, int res,
                      int c, int nh, int m, bool want_shift,
                      std::map<std::string, IndexMap>* idx_cache,
                      std::map<std::string, CTensor>* mask_cache, Var* attn_out) {
  if (x.shape() != Shape{batch, static_cast<int64_t>(res) * res, c})
    throw ShapeError("attention: tokens must be [" + std::to_string(batch) + "," +
                     std::to_string(res * res) + "," + std::to_string(c) + "], got " +
                     shape_str(x.shape()));
  if (res % m != 0)
    throw ShapeError("attention: resolution " + std::to_string(res) +
                     " not divisible by window " + std::to_string(m));
  if (c % nh != 0) throw ShapeError("attention: channels not divisible by heads");
  std::map<std::string, IndexMap> local_idx;
  std::map<std::string, CTensor> local_mask;
  if (!idx_cache) idx_cache = &local_idx;
  if (!mask_cache) mask_cache = &local_mask;
  auto cached = [&](const std::string& key, const std::function<std::vector<int64_t>()>& make) {
    auto it = idx_cache->find(key);
    if (it != idx_cache->end()) return it->second;
    auto idx = std::make_shared<const std::vector<int64_t>>(make());
    idx_cache->emplace(key, idx);
    return IndexMap(idx);
  };

  const int d = c / nh;
  const int shift = (want_shift && res > m) ? m / 2 : 0;
  const int nw_side = res / m;
  const int nw = nw_side * nw_side;
  const int64_t groups = static_cast<int64_t>(batch) * nw;
  const int64_t m2 = static_cast<int64_t>(m) * m;
  const int64_t len = static_cast<int64_t>(res) * res;

  auto roll_idx = [&](int s_amt) {
    return cached("roll." + std::to_string(batch) + "." + std::to_string(res) + "." +
                      std::to_string(c) + "." + std::to_string(s_amt),
                  [&] {
                    std::vector<int64_t> idx(static_cast<size_t>(batch * len * c));
                    int64_t o = 0;
                    for (int n = 0; n < batch; ++n)
                      for (int y = 0; y < res; ++y)
                        for (int xq = 0; xq < res; ++xq) {
                          const int sy = (y + s_amt) % res, sx = (xq + s_amt) % res;
                          const int64_t src =
                              (static_cast<int64_t>(n) * len + sy * res + sx) * c;
                          for (int ch = 0; ch < c; ++ch) idx[o++] = src + ch;
                        }
                    return idx;
                  });
  };

  Var h = x;
  if (shift > 0) h = gather(h, roll_idx(shift), h.shape());

  IndexMap part_idx = cached(
      "part." + std::to_string(batch) + "." + std::to_string(res) + "." + std::to_string(c) +
          "." + std::to_string(m),
      [&] {
        std::vector<int64_t> idx(static_cast<size_t>(groups * m2 * c));
        int64_t o = 0;
        for (int n = 0; n < batch; ++n)
          for (int wy = 0; wy < nw_side; ++wy)
            for (int wx = 0; wx < nw_side; ++wx)
              for (int wh = 0; wh < m; ++wh)
                for (int ww = 0; ww < m; ++ww) {
                  const int64_t src =
                      (static_cast<int64_t>(n) * len + (wy * m + wh) * res + wx * m + ww) * c;
                  for (int ch = 0; ch < c; ++ch) idx[o++] = src + ch;
                }
        return idx;
      });
  h = gather(h, part_idx, Shape{groups, m2, c});

  Var qkv = linear(h, w.qkv_w, w.qkv_b);  // [G, M2, 3C]
  auto head_idx = [&](int part) {
    return cached("head." + std::to_string(groups) + "." + std::to_string(m2) + "." +
                      std::to_string(c) + "." + std::to_string(nh) + "." + std::to_string(part),
                  [&] {
                    std::vector<int64_t> idx(static_cast<size_t>(groups * nh * m2 * d));
                    int64_t o = 0;
                    for (int64_t g = 0; g < groups; ++g)
                      for (int hh = 0; hh < nh; ++hh)
                        for (int64_t i = 0; i < m2; ++i)
                          for (int dd = 0; dd < d; ++dd)
                            idx[o++] = (g * m2 + i) * 3 * c + part * c + hh * d + dd;
                    return idx;
                  });
  };
  Var q = gather(qkv, head_idx(0), Shape{groups, nh, m2, d});
  Var k = gather(qkv, head_idx(1), Shape{groups, nh, m2, d});
  Var v = gather(qkv, head_idx(2), Shape{groups, nh, m2, d});
  q = scale(q, 1.0 / std::sqrt(static_cast<double>(d)));

  Var attn = cmatmul(q, k, /*transpose_b=*/true);  // [G, nH, M2, M2]

  IndexMap rpb_idx = cached("rpb." + std::to_string(m) + "." + std::to_string(nh), [&] {
    std::vector<int64_t> idx(static_cast<size_t>(nh * m2 * m2));
    int64_t o = 0;
    for (int hh = 0; hh < nh; ++hh)
      for (int64_t i = 0; i < m2; ++i)
        for (int64_t j = 0; j < m2; ++j) {
          const int dy = static_cast<int>(i / m - j / m) + m - 1;
          const int dx = static_cast<int>(i % m - j % m) + m - 1;
          idx[o++] = static_cast<int64_t>(dy * (2 * m - 1) + dx) * nh + hh;
        }
    return idx;
  });
  Var bias = gather(w.rpb_table, rpb_idx, Shape{nh, m2, m2});
  attn = add_to_real(attn, bias);

  if (shift > 0) {
    const std::string mkey = "mask." + std::to_string(batch) + "." + std::to_string(res) + "." +
                             std::to_string(m) + "." + std::to_string(nh);
    auto mit = mask_cache->find(mkey);
    if (mit == mask_cache->end()) {
      // region ids on the rolled grid; wrapped content may not attend across
      std::vector<int> region(static_cast<size_t>(len));
      auto band = [&](int t) { return t < res - m ? 0 : (t < res - shift ? 1 : 2); };
      for (int y = 0; y < res; ++y)
        for (int xq = 0; xq < res; ++xq) region[y * res + xq] = band(y) * 3 + band(xq);
      CTensor mask = CTensor::zeros(Shape{groups, nh, m2, m2});
      for (int64_t g = 0; g < groups; ++g) {
        const int wq = static_cast<int>(g % nw);
        const int wy = wq / nw_side, wx = wq % nw_side;
        for (int64_t i = 0; i < m2; ++i)
          for (int64_t j = 0; j < m2; ++j) {
            const int yi = wy * m + static_cast<int>(i / m), xi = wx * m + static_cast<int>(i % m);
            const int yj = wy * m + static_cast<int>(j / m), xj = wx * m + static_cast<int>(j % m);
            if (region[yi * res + xi] != region[yj * res + xj]) {
              for (int hh = 0; hh < nh; ++hh) {
                const int64_t at = idx4(g, hh, i, j, nh, m2, m2);
                mask.re[at] = kMaskValue;
                mask.im[at] = kMaskValue;
              }
            }
          }
      }
      mit = mask_cache->emplace(mkey, std::move(mask)).first;
    }
    attn = add(attn, Var::constant(mit->second));
  }

  attn = softmax_last(attn);
  if (attn_out) *attn_out = attn;
  Var out = cmatmul(attn, v);  // [G, nH, M2, d]

  IndexMap merge_idx = cached(
      "hmerge." + std::to_string(groups) + "." + std::to_string(m2) + "." + std::to_string(c) +
          "." + std::to_string(nh),
      [&] {
        std::vector<int64_t> idx(static_cast<size_t>(groups * m2 * c));
        int64_t o = 0;
        for (int64_t g = 0; g < groups; ++g)
          for (int64_t i = 0; i < m2; ++i)
            for (int ch = 0; ch < c; ++ch) {
              const int hh = ch / d, dd = ch % d;
              idx[o++] = ((g * nh + hh) * m2 + i) * d + dd;
            }
        return idx;
      });
  out = gather(out, merge_idx, Shape{groups, m2, c});
  out = linear(out, w.proj_w, w.proj_b);

  IndexMap rev_idx = cached(
      "rev." + std::to_string(batch) + "." + std::to_string(res) + "." + std::to_string(c) +
          "." + std::to_string(m),
      [&] {
        std::vector<int64_t> idx(static_cast<size_t>(batch * len * c));
        int64_t o = 0;
        for (int n = 0; n < batch; ++n)
          for (int y = 0; y < res; ++y)
            for (int xq = 0; xq < res; ++xq) {
              const int wy = y / m, wx = xq / m, wh = y % m, ww = xq % m;
              const int64_t g = static_cast<int64_t>(n) * nw + wy * nw_side + wx;
              const int64_t src = (g * m2 + wh * m + ww) * c;
              for (int ch = 0; ch < c; ++ch) idx[o++] = src + ch;
            }
        return idx;
      });
  out = gather(out, rev_idx, Shape{batch, len, c});
  if (shift > 0) out = gather(out, roll_idx(res - shift), out.shape());
  return out;
}

Var swin_block(const Var& tokens, const SwinBlockWeights& blk, int batch, int res,
               int channels, int heads, int window, double drop_rate, bool shared_mask,
               ForwardContext& ctx, std::map<std::string, IndexMap>* idx_cache,
               std::map<std::string, CTensor>* mask_cache) {
  WindowAttentionWeights w{blk.qkv_w, blk.qkv_b, blk.proj_w, blk.proj_b, blk.rpb_table};
  Var h = add(cwindow_attention(layer_norm(tokens, blk.ln1_g, blk.ln1_b), w, batch, res,
                                channels, heads, window, blk.shifted, idx_cache, mask_cache),
              tokens);
  Var m = gelu(linear(layer_norm(h, blk.ln2_g, blk.ln2_b), blk.mlp_w1, blk.mlp_b1));
  if (ctx.training && drop_rate > 0.0) m = dropout(m, drop_rate, ctx.rng, shared_mask);
  m = linear(m, blk.mlp_w2, blk.mlp_b2);
  if (ctx.training && drop_rate > 0.0) m = dropout(m, drop_rate, ctx.rng, shared_mask);
  return add(m, h);
}

Var SwinDenoiser::forward(const Var& image, ForwardContext& ctx) {
  const Shape& s = image.shape();
  if (s.size() != 4 || s[1] != cfg_.in_channels || s[2] != cfg_.image_size ||
      s[3] != cfg_.image_size)
    throw ShapeError("swin forward: expected [N," + std::to_string(cfg_.in_channels) + "," +
                     std::to_string(cfg_.image_size) + "," + std::to_string(cfg_.image_size) +
                     "], got " + shape_str(s));
  const int batch = static_cast<int>(s[0]);
  const int p = cfg_.patch_size;
  const int hw = cfg_.image_size;
  const int rp = hw / p;
  const int cin = cfg_.in_channels;
  const int f = p * p * cin;

  IndexMap patch_idx = cached_idx("patch." + std::to_string(batch), [&] {
    std::vector<int64_t> idx(static_cast<size_t>(batch) * rp * rp * f);
    int64_t o = 0;
    for (int n = 0; n < batch; ++n)
      for (int py = 0; py < rp; ++py)
        for (int px = 0; px < rp; ++px)
          for (int ci = 0; ci < cin; ++ci)
            for (int dy = 0; dy < p; ++dy)
              for (int dx = 0; dx < p; ++dx)
                idx[o++] = idx4(n, ci, py * p + dy, px * p + dx, cin, hw, hw);
    return idx;
  });
  Var tokens = gather(image, patch_idx, Shape{batch, static_cast<int64_t>(rp) * rp, f});
  tokens = linear(tokens, embed_w, embed_b);
  tokens = layer_norm(tokens, embed_ln_g, embed_ln_b);

  std::vector<Var> skips(3);
  for (int st = 0; st < 4; ++st) {
    const int res = cfg_.stage_resolution(st);
    for (const auto& blk : enc_[st].blocks)
      tokens = swin_block(tokens, blk, batch, res, cfg_.stage_channels(st), cfg_.heads[st],
                          cfg_.stage_window(st), cfg_.drop_rate, cfg_.dropout_shared_mask, ctx,
                          &idx_cache_, &mask_cache_);
    if (st < 3) {
      skips[st] = tokens;
      // merge 2x2 neighbours then reduce 4C -> 2C
      const int c = cfg_.stage_channels(st);
      const int r2 = res / 2;
      IndexMap mi = cached_idx(
          "merge." + std::to_string(batch) + "." + std::to_string(res) + "." + std::to_string(c),
          [&] {
            std::vector<int64_t> idx(static_cast<size_t>(batch) * r2 * r2 * 4 * c);
            int64_t o = 0;
            for (int n = 0; n < batch; ++n)
              for (int my = 0; my < r2; ++my)
                for (int mx = 0; mx < r2; ++mx)
                  for (int q = 0; q < 4; ++q) {
                    const int dy = q / 2, dx = q % 2;
                    const int64_t src =
                        (static_cast<int64_t>(n) * res * res + (2 * my + dy) * res + 2 * mx + dx) *
                        c;
                    for (int ch = 0; ch < c; ++ch) idx[o++] = src + ch;
                  }
            return idx;
          });
      tokens = gather(tokens, mi, Shape{batch, static_cast<int64_t>(r2) * r2, 4 * c});
      tokens = linear(tokens, merge_w_[st], merge_b_[st]);
    }
  }

  for (int st = 3; st >= 0; --st) {
    const int res = cfg_.stage_resolution(st);
    if (st < 3) {
      // expand from stage st+1 to st: linear to 2*C_{st+1}, pixel-shuffle 2x
      const int ci = cfg_.stage_channels(st + 1);
      const int co = ci / 2;
      const int rin = cfg_.stage_resolution(st + 1);
      tokens = linear(tokens, expand_w_[st], expand_b_[st]);  // [N, rin^2, 2*ci]
      IndexMap ei = cached_idx(
          "expand." + std::to_string(batch) + "." + std::to_string(rin) + "." +
              std::to_string(ci),
          [&] {
            std::vector<int64_t> idx(static_cast<size_t>(batch) * res * res * co);
            int64_t o = 0;
            for (int n = 0; n < batch; ++n)
              for (int y = 0; y < res; ++y)
                for (int xq = 0; xq < res; ++xq) {
                  const int sy = y / 2, sx = xq / 2, qd = (y % 2) * 2 + xq % 2;
                  const int64_t src =
                      (static_cast<int64_t>(n) * rin * rin + sy * rin + sx) * 2 * ci + qd * co;
                  for (int ch = 0; ch < co; ++ch) idx[o++] = src + ch;
                }
            return idx;
          });
      tokens = gather(tokens, ei, Shape{batch, static_cast<int64_t>(res) * res, co});
      tokens = concat_last(tokens, skips[st]);
      tokens = linear(tokens, skip_w_[st], skip_b_[st]);
    }
    for (const auto& blk : dec_[st].blocks)
      tokens = swin_block(tokens, blk, batch, res, cfg_.stage_channels(st), cfg_.heads[st],
                          cfg_.stage_window(st), cfg_.drop_rate, cfg_.dropout_shared_mask, ctx,
                          &idx_cache_, &mask_cache_);
  }

  // head: expand x4 back to pixels, then 1x1 unembedding to input channels
  const int c0 = cfg_.embed_dim;
  tokens = linear(tokens, final_expand_w, final_expand_b);  // [N, rp^2, p^2*C]
  IndexMap fe = cached_idx("fexp." + std::to_string(batch), [&] {
    std::vector<int64_t> idx(static_cast<size_t>(batch) * hw * hw * c0);
    int64_t o = 0;
    for (int n = 0; n < batch; ++n)
      for (int y = 0; y < hw; ++y)
        for (int xq = 0; xq < hw; ++xq) {
          const int sy = y / p, sx = xq / p, qd = (y % p) * p + xq % p;
          const int64_t src =
              (static_cast<int64_t>(n) * rp * rp + sy * rp + sx) * (p * p * c0) + qd * c0;
          for (int ch = 0; ch < c0; ++ch) idx[o++] = src + ch;
        }
    return idx;
  });
  tokens = gather(tokens, fe, Shape{batch, static_cast<int64_t>(hw) * hw, c0});
  tokens = linear(tokens, unembed_w, unembed_b);  // [N, H*W, Cin]
  IndexMap up = cached_idx("unpatch." + std::to_string(batch), [&] {
    std::vector<int64_t> idx(static_cast<size_t>(batch) * cin * hw * hw);
    int64_t o = 0;
    for (int n = 0; n < batch; ++n)
      for (int ci = 0; ci < cin; ++ci)
        for (int y = 0; y < hw; ++y)
          for (int xq = 0; xq < hw; ++xq)
            idx[o++] = (static_cast<int64_t>(n) * hw * hw + static_cast<int64_t>(y) * hw + xq) *
                           cin +
                       ci;
    return idx;
  });
  return gather(tokens, up, Shape{batch, cin, hw, hw});
}

std::vector<std::pair<int, int>> SwinDenoiser::stage_trace() const {
  std::vector<std::pair<int, int>> t;
  for (int s = 0; s < 4; ++s) t.emplace_back(cfg_.stage_resolution(s), cfg_.stage_channels(s));
  for (int s = 3; s >= 0; --s) t.emplace_back(cfg_.stage_resolution(s), cfg_.stage_channels(s));
  return t;
}

// ---------------------------------------------------------------------------
// ComplexUnet
// ---------------------------------------------------------------------------

namespace {

RTensor he_init(const Shape& s, std::mt19937_64& rng) {
  const double fan_in = static_cast<double>(s[1] * s[2] * s[3]);
  return randn(s, rng, std::sqrt(2.0 / fan_in));
}

}  // namespace

ComplexUnet::ComplexUnet(int in_channels, int base_channels, uint64_t seed)
    : in_channels_(in_channels), base_(base_channels) {
  if (in_channels < 1 || base_channels < 1) throw ValueError("unet: bad channel counts");
  std::mt19937_64 rng(seed);
  const int c = base_;
  auto add_conv = [&](const std::string& name, int co, int ci, int k) {
    w_.push_back(params_.create(name + ".w", he_init(Shape{co, ci, k, k}, rng)));
    b_.push_back(params_.create(name + ".b", RTensor::zeros(Shape{co})));
  };
  add_conv("e0a", c, in_channels_, 3);   // 0
  add_conv("e0b", c, c, 3);              // 1
  add_conv("d1", 2 * c, c, 3);           // 2 (stride 2)
  add_conv("e1", 2 * c, 2 * c, 3);       // 3
  add_conv("d2", 4 * c, 2 * c, 3);       // 4 (stride 2)
  add_conv("e2", 4 * c, 4 * c, 3);       // 5
  add_conv("d3", 8 * c, 4 * c, 3);       // 6 (stride 2)
  add_conv("bott", 8 * c, 8 * c, 3);     // 7
  add_conv("u2", 4 * c, 8 * c, 3);       // 8 (after upsample)
  add_conv("f2", 4 * c, 8 * c, 3);       // 9 (after concat)
  add_conv("u1", 2 * c, 4 * c, 3);       // 10
  add_conv("f1", 2 * c, 4 * c, 3);       // 11
  add_conv("u0", c, 2 * c, 3);           // 12
  add_conv("f0", c, 2 * c, 3);           // 13
  add_conv("head", in_channels_, c, 1);  // 14
}

Var ComplexUnet::conv_block(const Var& x, const Var& w, const Var& b, int stride) {
  const int pad = w.shape()[2] == 1 ? 0 : 1;
  return relu(conv2d(x, w, b, stride, pad));
}

namespace {

IndexMap cache_idx(std::map<std::string, IndexMap>& cache, const std::string& key,
                   const std::function<std::vector<int64_t>()>& make) {
  auto it = cache.find(key);
  if (it != cache.end()) return it->second;
  auto idx = std::make_shared<const std::vector<int64_t>>(make());
  cache.emplace(key, idx);
  return idx;
}

}  // namespace

Var ComplexUnet::forward(const Var& image, ForwardContext& ctx) {
  (void)ctx;
  const Shape& s = image.shape();
  if (s.size() != 4 || s[1] != in_channels_)
    throw ShapeError("unet forward: expected [N," + std::to_string(in_channels_) +
                     ",H,W], got " + shape_str(s));
  if (s[2] % 8 != 0 || s[3] % 8 != 0)
    throw ShapeError("unet forward: H and W must be multiples of 8, got " + shape_str(s));

  auto upsample2 = [&](const Var& x) {
    const Shape& xs = x.shape();
    const int64_t n = xs[0], ch = xs[1], h = xs[2], w = xs[3];
    IndexMap idx = cache_idx(
        idx_cache_,
        "up." + std::to_string(n) + "." + std::to_string(ch) + "." + std::to_string(h) + "." +
            std::to_string(w),
        [&] {
          std::vector<int64_t> v(static_cast<size_t>(n * ch * 4 * h * w));
          int64_t o = 0;
          for (int64_t nn = 0; nn < n; ++nn)
            for (int64_t cc = 0; cc < ch; ++cc)
              for (int64_t y = 0; y < 2 * h; ++y)
                for (int64_t xx = 0; xx < 2 * w; ++xx)
                  v[o++] = idx4(nn, cc, y / 2, xx / 2, ch, h, w);
          return v;
        });
    return gather(x, idx, Shape{n, ch, 2 * h, 2 * w});
  };
  auto to_nhwc = [&](const Var& x) {
    const Shape& xs = x.shape();
    const int64_t n = xs[0], ch = xs[1], h = xs[2], w = xs[3];
    IndexMap idx = cache_idx(idx_cache_,
                             "nhwc." + std::to_string(n) + "." + std::to_string(ch) + "." +
                                 std::to_string(h) + "." + std::to_string(w),
                             [&] {
                               std::vector<int64_t> v(static_cast<size_t>(n * ch * h * w));
                               int64_t o = 0;
                               for (int64_t nn = 0; nn < n; ++nn)
                                 for (int64_t y = 0; y < h; ++y)
                                   for (int64_t xx = 0; xx < w; ++xx)
                                     for (int64_t cc = 0; cc < ch; ++cc)
                                       v[o++] = idx4(nn, cc, y, xx, ch, h, w);
                               return v;
                             });
    return gather(x, idx, Shape{n, h, w, ch});
  };
  auto to_nchw = [&](const Var& x) {
    const Shape& xs = x.shape();
    const int64_t n = xs[0], h = xs[1], w = xs[2], ch = xs[3];
    IndexMap idx = cache_idx(idx_cache_,
                             "nchw." + std::to_string(n) + "." + std::to_string(ch) + "." +
                                 std::to_string(h) + "." + std::to_string(w),
                             [&] {
                               std::vector<int64_t> v(static_cast<size_t>(n * ch * h * w));
                               int64_t o = 0;
                               for (int64_t nn = 0; nn < n; ++nn)
                                 for (int64_t cc = 0; cc < ch; ++cc)
                                   for (int64_t y = 0; y < h; ++y)
                                     for (int64_t xx = 0; xx < w; ++xx)
                                       v[o++] = idx4(nn, y, xx, cc, h, w, ch);
                               return v;
                             });
    return gather(x, idx, Shape{n, ch, h, w});
  };
  auto cat_channels = [&](const Var& a, const Var& b) {
    return to_nchw(concat_last(to_nhwc(a), to_nhwc(b)));
  };

  Var e0 = conv_block(conv_block(image, w_[0], b_[0], 1), w_[1], b_[1], 1);
  Var e1 = conv_block(conv_block(e0, w_[2], b_[2], 2), w_[3], b_[3], 1);
  Var e2 = conv_block(conv_block(e1, w_[4], b_[4], 2), w_[5], b_[5], 1);
  Var bott = conv_block(conv_block(e2, w_[6], b_[6], 2), w_[7], b_[7], 1);
  Var u2 = conv_block(upsample2(bott), w_[8], b_[8], 1);
  Var f2 = conv_block(cat_channels(u2, e2), w_[9], b_[9], 1);
  Var u1 = conv_block(upsample2(f2), w_[10], b_[10], 1);
  Var f1 = conv_block(cat_channels(u1, e1), w_[11], b_[11], 1);
  Var u0 = conv_block(upsample2(f1), w_[12], b_[12], 1);
  Var f0 = conv_block(cat_channels(u0, e0), w_[13], b_[13], 1);
  return conv2d(f0, w_[14], b_[14], 1, 0);
}

}  // namespace csd
