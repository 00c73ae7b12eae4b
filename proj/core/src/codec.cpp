#include "vqab/codec.hpp"

#include <stdexcept>

namespace vqab {

namespace op = ops;

std::vector<int> ModelConfig::effective_multipliers() const {
  std::vector<int> m = channel_multipliers;
  if (small_network && m.size() > 1) m.pop_back();
  return m;
}

int ModelConfig::effective_downsamples() const {
  return small_network && channel_multipliers.size() > 1 ? num_downsamples - 1 : num_downsamples;
}

int ModelConfig::latent_size() const { return image_size >> effective_downsamples(); }

std::vector<int> ModelConfig::attention_resolutions() const {
  if (!attn_at_resolutions.empty()) return attn_at_resolutions;
  return {latent_size()};
}

void ModelConfig::validate() const {
  if (image_size < 2 || image_size % 2 != 0)
    throw std::invalid_argument("ModelConfig: image_size must be a positive even number, got " +
                                std::to_string(image_size));
  if (in_channels != 3) throw std::invalid_argument("ModelConfig: in_channels must be 3");
  if (base_channels < 1 || latent_dim < 1 || codebook_size < 1)
    throw std::invalid_argument("ModelConfig: base_channels, latent_dim and codebook_size must be positive");
  if (channel_multipliers.empty()) throw std::invalid_argument("ModelConfig: channel_multipliers must be non-empty");
  if (static_cast<int>(channel_multipliers.size()) != num_downsamples + 1)
    throw std::invalid_argument("ModelConfig: need one channel multiplier per resolution stage (num_downsamples+1), "
                                "got " +
                                std::to_string(channel_multipliers.size()) + " for " +
                                std::to_string(num_downsamples) + " downsamples");
  if (num_downsamples < 0) throw std::invalid_argument("ModelConfig: num_downsamples must be non-negative");
  if (small_network && channel_multipliers.size() < 2)
    throw std::invalid_argument("ModelConfig: small_network needs at least two resolution stages to trim");
  int down = effective_downsamples();
  if (image_size % (1 << down) != 0)
    throw std::invalid_argument("ModelConfig: image_size " + std::to_string(image_size) +
                                " not divisible by 2^" + std::to_string(down));
  // Every intermediate resolution must stay even for the mirror to be exact.
  int res = image_size;
  for (int i = 0; i < down; ++i) {
    if (res % 2 != 0)
      throw std::invalid_argument("ModelConfig: odd intermediate resolution " + std::to_string(res));
    res /= 2;
  }
  if (use_positional_encoding) {
    auto mult = effective_multipliers();
    if (base_channels % 4 != 0 || (base_channels * mult.back()) % 4 != 0)
      throw std::invalid_argument("ModelConfig: positional encoding requires channel counts divisible by 4");
  }
  if (dropout_rate < 0.0 || dropout_rate >= 1.0)
    throw std::invalid_argument("ModelConfig: dropout_rate must lie in [0,1)");
}

namespace {
bool wants_attention(const ModelConfig& c, int res) {
  for (int r : c.attention_resolutions())
    if (r == res) return true;
  return false;
}
}  // namespace

Encoder::Encoder(const ModelConfig& config, ParamStore& params, Rng& rng) : config_(config) {
  config_.validate();
  auto mult = config_.effective_multipliers();
  int n_stages = static_cast<int>(mult.size());
  int down = config_.effective_downsamples();

  conv_in_ = Conv2dLayer(config_.in_channels, config_.base_channels, 3, 1, 1, params, "enc.conv_in", rng);
  if (config_.use_positional_encoding)
    pos_enc_ = std::make_unique<PositionalEncoding2D>(config_.base_channels, config_.image_size, config_.image_size,
                                                      config_.dropout_rate);

  int ch = config_.base_channels;
  int res = config_.image_size;
  for (int i = 0; i < n_stages; ++i) {
    Stage stage;
    int out_ch = config_.base_channels * mult[i];
    std::string prefix = "enc.stage" + std::to_string(i);
    stage.residuals.emplace_back(ch, out_ch, params, prefix + ".res0", rng);
    stage.residuals.emplace_back(out_ch, out_ch, params, prefix + ".res1", rng);
    ch = out_ch;
    if (wants_attention(config_, res)) stage.attn = std::make_unique<NonLocalBlock>(ch, params, prefix + ".attn", rng);
    if (i < down) {
      stage.down = std::make_unique<DownsampleBlock>(ch, params, prefix + ".down", rng);
      res /= 2;
    }
    stages_.push_back(std::move(stage));
  }
  mid1_ = ResidualBlock(ch, ch, params, "enc.mid.res0", rng);
  mid_attn_ = NonLocalBlock(ch, params, "enc.mid.attn", rng);
  mid2_ = ResidualBlock(ch, ch, params, "enc.mid.res1", rng);
  norm_out_ = GroupNormLayer(ch, params, "enc.norm_out");
  conv_out_ = Conv2dLayer(ch, config_.latent_dim, 3, 1, 1, params, "enc.conv_out", rng);
}

Tensor Encoder::forward(const Tensor& image, const ForwardCtx& ctx) const {
  const Shape& s = image.shape();
  if (s.size() != 4 || s[1] != config_.in_channels || s[2] != config_.image_size || s[3] != config_.image_size)
    throw std::invalid_argument("Encoder: expected (N,3," + std::to_string(config_.image_size) + "," +
                                std::to_string(config_.image_size) + ") input, got " + shape_str(s));
  Tensor h = conv_in_.forward(image);
  if (pos_enc_) {
    static Rng eval_rng(0);  // unused in eval mode
    h = pos_enc_->apply(h, ctx.train, ctx.rng ? *ctx.rng : eval_rng);
  }
  for (const Stage& stage : stages_) {
    for (const ResidualBlock& r : stage.residuals) h = r.forward(h);
    if (stage.attn) h = stage.attn->forward(h);
    if (stage.down) h = stage.down->forward(h);
  }
  h = mid2_.forward(mid_attn_.forward(mid1_.forward(h)));
  return conv_out_.forward(op::swish(norm_out_.forward(h)));
}

Decoder::Decoder(const ModelConfig& config, ParamStore& params, Rng& rng) : config_(config) {
  config_.validate();
  auto mult = config_.effective_multipliers();
  int n_stages = static_cast<int>(mult.size());
  int down = config_.effective_downsamples();
  int low_ch = config_.base_channels * mult.back();
  int latent = config_.latent_size();

  conv_in_ = Conv2dLayer(config_.latent_dim, low_ch, 3, 1, 1, params, "dec.conv_in", rng);
  if (config_.use_positional_encoding) {
    pos_enc_in_ = std::make_unique<PositionalEncoding2D>(low_ch, latent, latent, config_.dropout_rate);
    pos_enc_mid_ = std::make_unique<PositionalEncoding2D>(low_ch, latent, latent, config_.dropout_rate);
  }
  mid1_ = ResidualBlock(low_ch, low_ch, params, "dec.mid.res0", rng);
  mid_attn_ = NonLocalBlock(low_ch, params, "dec.mid.attn", rng);
  mid2_ = ResidualBlock(low_ch, low_ch, params, "dec.mid.res1", rng);

  int ch = low_ch;
  int res = latent;
  stages_.resize(static_cast<size_t>(n_stages));
  for (int i = n_stages - 1; i >= 0; --i) {
    Stage& stage = stages_[static_cast<size_t>(i)];
    int out_ch = config_.base_channels * mult[static_cast<size_t>(i)];
    std::string prefix = "dec.stage" + std::to_string(i);
    stage.residuals.emplace_back(ch, out_ch, params, prefix + ".res0", rng);
    stage.residuals.emplace_back(out_ch, out_ch, params, prefix + ".res1", rng);
    ch = out_ch;
    if (wants_attention(config_, res)) stage.attn = std::make_unique<NonLocalBlock>(ch, params, prefix + ".attn", rng);
    if (i > n_stages - 1 - down) {
      stage.up = std::make_unique<UpsampleBlock>(ch, params, prefix + ".up", rng);
      res *= 2;
    }
  }
  norm_out_ = GroupNormLayer(ch, params, "dec.norm_out");
  conv_out_ = Conv2dLayer(ch, config_.in_channels, 3, 1, 1, params, "dec.conv_out", rng);
}

Tensor Decoder::forward(const Tensor& z_q, const ForwardCtx& ctx) const {
  return forward(z_q, ctx, nullptr);
}

Tensor Decoder::forward(const Tensor& z_q, const ForwardCtx& ctx, Tensor* penultimate) const {
  const Shape& s = z_q.shape();
  int latent = config_.latent_size();
  if (s.size() != 4 || s[1] != config_.latent_dim || s[2] != latent || s[3] != latent)
    throw std::invalid_argument("Decoder: expected (N," + std::to_string(config_.latent_dim) + "," +
                                std::to_string(latent) + "," + std::to_string(latent) + ") input, got " +
                                shape_str(s));
  static Rng eval_rng(0);
  Rng& rng = ctx.rng ? *ctx.rng : eval_rng;

  Tensor h = conv_in_.forward(z_q);
  if (pos_enc_in_) h = pos_enc_in_->apply(h, ctx.train, rng);
  h = mid2_.forward(mid_attn_.forward(mid1_.forward(h)));

  bool first_upsample = true;
  int n_stages = static_cast<int>(stages_.size());
  for (int i = n_stages - 1; i >= 0; --i) {
    const Stage& stage = stages_[static_cast<size_t>(i)];
    for (const ResidualBlock& r : stage.residuals) h = r.forward(h);
    if (stage.attn) h = stage.attn->forward(h);
    if (stage.up) {
      if (first_upsample && pos_enc_mid_) h = pos_enc_mid_->apply(h, ctx.train, rng);
      first_upsample = false;
      h = stage.up->forward(h);
    }
  }
  Tensor pen = op::swish(norm_out_.forward(h));
  if (penultimate) *penultimate = pen;
  return conv_out_.forward(pen);
}

VQModel::VQModel(const ModelConfig& config, uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng(seed);
  codebook_ = std::make_unique<Codebook>(config_.codebook_size, config_.latent_dim, rng);
  params_.add("codebook.embeddings", codebook_->embeddings());
  encoder_ = std::make_unique<Encoder>(config_, params_, rng);
  decoder_ = std::make_unique<Decoder>(config_, params_, rng);
}

Tensor VQModel::encode(const Tensor& image, const ForwardCtx& ctx) const { return encoder_->forward(image, ctx); }

Tensor VQModel::decode(const Tensor& z_q, const ForwardCtx& ctx) const { return decoder_->forward(z_q, ctx); }

Tensor VQModel::decode(const Tensor& z_q, const ForwardCtx& ctx, Tensor* penultimate) const {
  return decoder_->forward(z_q, ctx, penultimate);
}

VQModel::Reconstruction VQModel::reconstruct(const Tensor& image, const ForwardCtx& ctx) {
  Reconstruction rec;
  rec.z = encode(image, ctx);
  rec.quant = codebook_->quantize(rec.z);
  rec.x_hat = decode(rec.quant.straight_through, ctx, &rec.penultimate);
  return rec;
}

int64_t VQModel::parameter_count() const {
  int64_t n = 0;
  for (const auto& [_, t] : params_.entries()) n += t.numel();
  return n;
}

}  // namespace vqab
