#include "fedseg/segnet.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "fedseg/errors.hpp"
#include "fedseg/metrics.hpp"
#include "fedseg/rng.hpp"

namespace fedseg {

namespace {

constexpr double kNormEps = 1e-5;
constexpr double kRunningMomentum = 0.9;

// [batch][channel][row][col] activation block
struct Act {
  std::size_t b = 0, c = 0, h = 0, w = 0;
  std::vector<double> v;

  Act() = default;
  Act(std::size_t b_, std::size_t c_, std::size_t h_, std::size_t w_)
      : b(b_), c(c_), h(h_), w(w_), v(b_ * c_ * h_ * w_, 0.0) {}

  double& at(std::size_t bi, std::size_t ci, std::size_t y, std::size_t x) {
    return v[((bi * c + ci) * h + y) * w + x];
  }
  double at(std::size_t bi, std::size_t ci, std::size_t y, std::size_t x) const {
    return v[((bi * c + ci) * h + y) * w + x];
  }
};

inline double sigmoid(double z) {
  return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z))
                  : std::exp(z) / (1.0 + std::exp(z));
}

// log(1 + e^{-z}) = -log sigmoid(z)
inline double neg_log_sigmoid(double z) {
  return z >= 0.0 ? std::log1p(std::exp(-z)) : -z + std::log1p(std::exp(z));
}

// conv with odd kernel k, zero padding, stride 1
void conv_forward(const Act& in, const std::vector<float>& weight,
                  const std::vector<float>& bias, std::size_t out_c,
                  std::size_t k, Act& out) {
  std::size_t pad = k / 2;
  out = Act(in.b, out_c, in.h, in.w);
  for (std::size_t bi = 0; bi < in.b; ++bi) {
    for (std::size_t oc = 0; oc < out_c; ++oc) {
      for (std::size_t y = 0; y < in.h; ++y) {
        for (std::size_t x = 0; x < in.w; ++x) {
          double acc = bias[oc];
          for (std::size_t ic = 0; ic < in.c; ++ic) {
            for (std::size_t ky = 0; ky < k; ++ky) {
              std::size_t sy = y + ky;
              if (sy < pad || sy - pad >= in.h) continue;
              for (std::size_t kx = 0; kx < k; ++kx) {
                std::size_t sx = x + kx;
                if (sx < pad || sx - pad >= in.w) continue;
                acc += static_cast<double>(
                           weight[((oc * in.c + ic) * k + ky) * k + kx]) *
                       in.at(bi, ic, sy - pad, sx - pad);
              }
            }
          }
          out.at(bi, oc, y, x) = acc;
        }
      }
    }
  }
}

void conv_backward(const Act& in, const std::vector<float>& weight,
                   std::size_t out_c, std::size_t k, const Act& g_out,
                   Act& g_in, std::vector<float>& g_weight,
                   std::vector<float>& g_bias) {
  std::size_t pad = k / 2;
  g_in = Act(in.b, in.c, in.h, in.w);
  std::vector<double> gw(weight.size(), 0.0);
  std::vector<double> gb(out_c, 0.0);
  for (std::size_t bi = 0; bi < in.b; ++bi) {
    for (std::size_t oc = 0; oc < out_c; ++oc) {
      for (std::size_t y = 0; y < in.h; ++y) {
        for (std::size_t x = 0; x < in.w; ++x) {
          double g = g_out.at(bi, oc, y, x);
          if (g == 0.0) continue;
          gb[oc] += g;
          for (std::size_t ic = 0; ic < in.c; ++ic) {
            for (std::size_t ky = 0; ky < k; ++ky) {
              std::size_t sy = y + ky;
              if (sy < pad || sy - pad >= in.h) continue;
              for (std::size_t kx = 0; kx < k; ++kx) {
                std::size_t sx = x + kx;
                if (sx < pad || sx - pad >= in.w) continue;
                std::size_t wi = ((oc * in.c + ic) * k + ky) * k + kx;
                gw[wi] += g * in.at(bi, ic, sy - pad, sx - pad);
                g_in.at(bi, ic, sy - pad, sx - pad) +=
                    g * static_cast<double>(weight[wi]);
              }
            }
          }
        }
      }
    }
  }
  for (std::size_t i = 0; i < gw.size(); ++i) {
    g_weight[i] = static_cast<float>(static_cast<double>(g_weight[i]) + gw[i]);
  }
  for (std::size_t i = 0; i < gb.size(); ++i) {
    g_bias[i] = static_cast<float>(static_cast<double>(g_bias[i]) + gb[i]);
  }
}

// Cached state of one normalization application; `sets` identifies the
// normalization set of each element (BN: channel; GN: sample*group).
struct NormCache {
  Act xhat;
  std::vector<double> inv_std;   // per set
  std::vector<double> mean;      // per set
  std::size_t num_sets = 0;
  std::size_t set_size = 0;
  bool per_batch_stats = false;  // true for BatchStats training mode
};

std::size_t bn_set_of(const Act& a, std::size_t bi, std::size_t ci) {
  (void)a;
  (void)bi;
  return ci;
}

void batchnorm_forward_train(const Act& in, const std::vector<float>& gamma,
                             const std::vector<float>& beta, Act& out,
                             NormCache& cache) {
  std::size_t n = in.b * in.h * in.w;
  cache.num_sets = in.c;
  cache.set_size = n;
  cache.per_batch_stats = true;
  cache.mean.assign(in.c, 0.0);
  cache.inv_std.assign(in.c, 0.0);
  cache.xhat = Act(in.b, in.c, in.h, in.w);
  out = Act(in.b, in.c, in.h, in.w);
  for (std::size_t ci = 0; ci < in.c; ++ci) {
    double mean = 0.0;
    for (std::size_t bi = 0; bi < in.b; ++bi)
      for (std::size_t y = 0; y < in.h; ++y)
        for (std::size_t x = 0; x < in.w; ++x) mean += in.at(bi, ci, y, x);
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t bi = 0; bi < in.b; ++bi)
      for (std::size_t y = 0; y < in.h; ++y)
        for (std::size_t x = 0; x < in.w; ++x) {
          double d = in.at(bi, ci, y, x) - mean;
          var += d * d;
        }
    var /= static_cast<double>(n);
    double inv_std = 1.0 / std::sqrt(var + kNormEps);
    cache.mean[ci] = mean;
    cache.inv_std[ci] = inv_std;
    for (std::size_t bi = 0; bi < in.b; ++bi)
      for (std::size_t y = 0; y < in.h; ++y)
        for (std::size_t x = 0; x < in.w; ++x) {
          double xh = (in.at(bi, ci, y, x) - mean) * inv_std;
          cache.xhat.at(bi, ci, y, x) = xh;
          out.at(bi, ci, y, x) =
              static_cast<double>(gamma[ci]) * xh + static_cast<double>(beta[ci]);
        }
  }
}

void batchnorm_forward_eval(const Act& in, const std::vector<float>& gamma,
                            const std::vector<float>& beta,
                            const std::vector<float>& running_mean,
                            const std::vector<float>& running_var, Act& out) {
  out = Act(in.b, in.c, in.h, in.w);
  for (std::size_t ci = 0; ci < in.c; ++ci) {
    double inv_std =
        1.0 / std::sqrt(static_cast<double>(running_var[ci]) + kNormEps);
    for (std::size_t bi = 0; bi < in.b; ++bi)
      for (std::size_t y = 0; y < in.h; ++y)
        for (std::size_t x = 0; x < in.w; ++x) {
          double xh =
              (in.at(bi, ci, y, x) - static_cast<double>(running_mean[ci])) *
              inv_std;
          out.at(bi, ci, y, x) =
              static_cast<double>(gamma[ci]) * xh + static_cast<double>(beta[ci]);
        }
  }
}

void groupnorm_forward(const Act& in, const std::vector<float>& gamma,
                       const std::vector<float>& beta, std::size_t groups,
                       Act& out, NormCache& cache) {
  std::size_t cpg = in.c / groups;
  std::size_t n = cpg * in.h * in.w;
  cache.num_sets = in.b * groups;
  cache.set_size = n;
  cache.per_batch_stats = false;
  cache.mean.assign(cache.num_sets, 0.0);
  cache.inv_std.assign(cache.num_sets, 0.0);
  cache.xhat = Act(in.b, in.c, in.h, in.w);
  out = Act(in.b, in.c, in.h, in.w);
  for (std::size_t bi = 0; bi < in.b; ++bi) {
    for (std::size_t g = 0; g < groups; ++g) {
      double mean = 0.0;
      for (std::size_t ci = g * cpg; ci < (g + 1) * cpg; ++ci)
        for (std::size_t y = 0; y < in.h; ++y)
          for (std::size_t x = 0; x < in.w; ++x) mean += in.at(bi, ci, y, x);
      mean /= static_cast<double>(n);
      double var = 0.0;
      for (std::size_t ci = g * cpg; ci < (g + 1) * cpg; ++ci)
        for (std::size_t y = 0; y < in.h; ++y)
          for (std::size_t x = 0; x < in.w; ++x) {
            double d = in.at(bi, ci, y, x) - mean;
            var += d * d;
          }
      var /= static_cast<double>(n);
      double inv_std = 1.0 / std::sqrt(var + kNormEps);
      std::size_t set = bi * groups + g;
      cache.mean[set] = mean;
      cache.inv_std[set] = inv_std;
      for (std::size_t ci = g * cpg; ci < (g + 1) * cpg; ++ci)
        for (std::size_t y = 0; y < in.h; ++y)
          for (std::size_t x = 0; x < in.w; ++x) {
            double xh = (in.at(bi, ci, y, x) - mean) * inv_std;
            cache.xhat.at(bi, ci, y, x) = xh;
            out.at(bi, ci, y, x) = static_cast<double>(gamma[ci]) * xh +
                                   static_cast<double>(beta[ci]);
          }
    }
  }
}

// shared backward for both normalizers; `set_of(bi, ci)` maps an element to
// its normalization set, `members(set)` enumerates elements (implicit below).
void norm_backward(const Act& g_out, const NormCache& cache,
                   const std::vector<float>& gamma, std::size_t groups,
                   bool group_mode, Act& g_in, std::vector<float>& g_gamma,
                   std::vector<float>& g_beta) {
  const Act& xhat = cache.xhat;
  g_in = Act(xhat.b, xhat.c, xhat.h, xhat.w);
  std::vector<double> gg(xhat.c, 0.0), gb(xhat.c, 0.0);
  std::vector<double> sum_gh(cache.num_sets, 0.0);
  std::vector<double> sum_ghx(cache.num_sets, 0.0);
  std::size_t cpg = group_mode ? xhat.c / groups : 0;
  auto set_of = [&](std::size_t bi, std::size_t ci) {
    return group_mode ? bi * groups + ci / cpg : ci;
  };
  for (std::size_t bi = 0; bi < xhat.b; ++bi)
    for (std::size_t ci = 0; ci < xhat.c; ++ci) {
      std::size_t set = set_of(bi, ci);
      for (std::size_t y = 0; y < xhat.h; ++y)
        for (std::size_t x = 0; x < xhat.w; ++x) {
          double g = g_out.at(bi, ci, y, x);
          double xh = xhat.at(bi, ci, y, x);
          gg[ci] += g * xh;
          gb[ci] += g;
          double gh = g * static_cast<double>(gamma[ci]);
          sum_gh[set] += gh;
          sum_ghx[set] += gh * xh;
        }
    }
  double inv_n = 1.0 / static_cast<double>(cache.set_size);
  for (std::size_t bi = 0; bi < xhat.b; ++bi)
    for (std::size_t ci = 0; ci < xhat.c; ++ci) {
      std::size_t set = set_of(bi, ci);
      for (std::size_t y = 0; y < xhat.h; ++y)
        for (std::size_t x = 0; x < xhat.w; ++x) {
          double gh = g_out.at(bi, ci, y, x) * static_cast<double>(gamma[ci]);
          double xh = xhat.at(bi, ci, y, x);
          g_in.at(bi, ci, y, x) =
              cache.inv_std[set] *
              (gh - inv_n * sum_gh[set] - xh * inv_n * sum_ghx[set]);
        }
    }
  for (std::size_t ci = 0; ci < xhat.c; ++ci) {
    g_gamma[ci] = static_cast<float>(static_cast<double>(g_gamma[ci]) + gg[ci]);
    g_beta[ci] = static_cast<float>(static_cast<double>(g_beta[ci]) + gb[ci]);
  }
}

void relu_forward(const Act& in, Act& out) {
  out = in;
  for (double& v : out.v) v = v > 0.0 ? v : 0.0;
}

void relu_backward(const Act& pre, const Act& g_out, Act& g_in) {
  g_in = g_out;
  for (std::size_t i = 0; i < g_in.v.size(); ++i) {
    if (pre.v[i] <= 0.0) g_in.v[i] = 0.0;
  }
}

struct FocalResult {
  double loss = 0.0;
  Act g_logits;
};

// Multi-label sigmoid focal cross-entropy, mean over batch*classes*pixels.
FocalResult focal_loss(const Act& logits,
                       const std::vector<const SynthImage*>& batch,
                       double alpha, double gamma, bool want_grad) {
  FocalResult res;
  if (want_grad) res.g_logits = Act(logits.b, logits.c, logits.h, logits.w);
  double inv_n =
      1.0 / static_cast<double>(logits.b * logits.c * logits.h * logits.w);
  for (std::size_t bi = 0; bi < logits.b; ++bi) {
    const SynthImage& img = *batch[bi];
    for (std::size_t k = 0; k < logits.c; ++k) {
      for (std::size_t y = 0; y < logits.h; ++y) {
        for (std::size_t x = 0; x < logits.w; ++x) {
          double z = logits.at(bi, k, y, x);
          bool positive = img.mask[y * logits.w + x] ==
                          static_cast<std::uint8_t>(k + 1);
          double p = sigmoid(z);
          double log_p = -neg_log_sigmoid(z);
          double log_1mp = -neg_log_sigmoid(-z);
          double elem, gelem;
          if (positive) {
            double w = gamma == 0.0 ? 1.0 : std::pow(1.0 - p, gamma);
            elem = -alpha * w * log_p;
            double focus =
                gamma == 0.0 ? 0.0 : gamma * p * w * log_p;
            gelem = alpha * (focus - w * (1.0 - p));
          } else {
            double w = gamma == 0.0 ? 1.0 : std::pow(p, gamma);
            elem = -(1.0 - alpha) * w * log_1mp;
            double focus =
                gamma == 0.0 ? 0.0 : gamma * (1.0 - p) * w * log_1mp;
            gelem = (1.0 - alpha) * (w * p - focus);
          }
          res.loss += elem * inv_n;
          if (want_grad) res.g_logits.at(bi, k, y, x) = gelem * inv_n;
        }
      }
    }
  }
  return res;
}

}  // namespace

const char* normalization_name(Normalization n) {
  switch (n) {
    case Normalization::kBatchStats: return "batch";
    case Normalization::kGroupStats: return "group";
    case Normalization::kNone: return "none";
  }
  return "?";
}

void ModelSpec::validate() const {
  if (height == 0 || width == 0 || channels == 0 || num_classes == 0 ||
      channel_widths.empty()) {
    throw ShapeMismatch("model spec has a zero dimension");
  }
  if (normalization == Normalization::kGroupStats) {
    if (group_count == 0) throw ShapeMismatch("group_count must be positive");
    for (auto w : channel_widths) {
      if (w % group_count != 0) {
        throw ShapeMismatch("group_count " + std::to_string(group_count) +
                            " does not divide channel width " +
                            std::to_string(w));
      }
    }
  }
}

SegNet::SegNet(ModelSpec spec) : spec_(std::move(spec)) { spec_.validate(); }

ParameterSet SegNet::initial_params(std::uint64_t seed) const {
  std::mt19937_64 rng = make_rng(seed);
  ParameterSet p;
  std::uint32_t in_c = spec_.channels;
  for (std::size_t i = 0; i < spec_.channel_widths.size(); ++i) {
    std::uint32_t out_c = spec_.channel_widths[i];
    std::normal_distribution<double> he(0.0, std::sqrt(2.0 / (in_c * 9.0)));
    std::uniform_real_distribution<double> bias_init(-0.1, 0.1);
    std::vector<float> w(static_cast<std::size_t>(out_c) * in_c * 9);
    for (auto& v : w) v = static_cast<float>(he(rng));
    std::vector<float> b(out_c);
    for (auto& v : b) v = static_cast<float>(bias_init(rng));
    std::string tag = "conv" + std::to_string(i);
    p.add(tag + ".weight", {out_c, in_c, 3, 3}, std::move(w));
    p.add(tag + ".bias", {out_c}, std::move(b));
    if (spec_.normalization != Normalization::kNone) {
      std::string ntag = "norm" + std::to_string(i);
      p.add(ntag + ".gamma", {out_c}, std::vector<float>(out_c, 1.0f));
      p.add(ntag + ".beta", {out_c}, std::vector<float>(out_c, 0.0f));
      if (spec_.normalization == Normalization::kBatchStats) {
        p.add(ntag + ".running_mean", {out_c}, std::vector<float>(out_c, 0.0f),
              TensorKind::kPersistentBuffer);
        p.add(ntag + ".running_var", {out_c}, std::vector<float>(out_c, 1.0f),
              TensorKind::kPersistentBuffer);
      }
    }
    in_c = out_c;
  }
  std::normal_distribution<double> he(0.0, std::sqrt(2.0 / in_c));
  std::uniform_real_distribution<double> bias_init(-0.1, 0.1);
  std::vector<float> hw(static_cast<std::size_t>(spec_.num_classes) * in_c);
  for (auto& v : hw) v = static_cast<float>(he(rng));
  std::vector<float> hb(spec_.num_classes);
  for (auto& v : hb) v = static_cast<float>(bias_init(rng));
  p.add("head.weight", {spec_.num_classes, in_c, 1, 1}, std::move(hw));
  p.add("head.bias", {spec_.num_classes}, std::move(hb));
  return p;
}

namespace {

struct LayerCache {
  Act conv_in;
  Act conv_out;   // pre-norm
  Act norm_out;   // pre-relu (or conv_out copy when no norm)
  NormCache norm;
};

struct NetCache {
  std::vector<LayerCache> layers;
  Act head_in;
  Act logits;
};

Act batch_to_act(const std::vector<const SynthImage*>& batch,
                 const ModelSpec& spec) {
  Act in(batch.size(), spec.channels, spec.height, spec.width);
  for (std::size_t bi = 0; bi < batch.size(); ++bi) {
    const SynthImage& img = *batch[bi];
    if (img.height != spec.height || img.width != spec.width) {
      throw ShapeMismatch("image shape does not match model spec");
    }
    for (std::size_t px = 0; px < img.intensity.size(); ++px) {
      in.v[bi * spec.channels * spec.height * spec.width + px] =
          img.intensity[px];
    }
  }
  return in;
}

void run_forward(const ModelSpec& spec, const ParameterSet& params,
                 const std::vector<const SynthImage*>& batch, bool training,
                 NetCache& cache) {
  Act x = batch_to_act(batch, spec);
  cache.layers.resize(spec.channel_widths.size());
  for (std::size_t i = 0; i < spec.channel_widths.size(); ++i) {
    LayerCache& lc = cache.layers[i];
    std::string tag = "conv" + std::to_string(i);
    lc.conv_in = std::move(x);
    conv_forward(lc.conv_in, params.at(tag + ".weight").values,
                 params.at(tag + ".bias").values, spec.channel_widths[i], 3,
                 lc.conv_out);
    if (spec.normalization == Normalization::kNone) {
      lc.norm_out = lc.conv_out;
    } else {
      std::string ntag = "norm" + std::to_string(i);
      const auto& gamma = params.at(ntag + ".gamma").values;
      const auto& beta = params.at(ntag + ".beta").values;
      if (spec.normalization == Normalization::kBatchStats) {
        if (training) {
          batchnorm_forward_train(lc.conv_out, gamma, beta, lc.norm_out,
                                  lc.norm);
        } else {
          batchnorm_forward_eval(lc.conv_out, gamma, beta,
                                 params.at(ntag + ".running_mean").values,
                                 params.at(ntag + ".running_var").values,
                                 lc.norm_out);
        }
      } else {
        groupnorm_forward(lc.conv_out, gamma, beta, spec.group_count,
                          lc.norm_out, lc.norm);
      }
    }
    relu_forward(lc.norm_out, x);
  }
  cache.head_in = std::move(x);
  conv_forward(cache.head_in, params.at("head.weight").values,
               params.at("head.bias").values, spec.num_classes, 1,
               cache.logits);
}

}  // namespace

ForwardResult SegNet::forward_loss(const ParameterSet& params,
                                   const std::vector<const SynthImage*>& batch,
                                   const TrainConfig& cfg, bool training) const {
  if (batch.empty()) throw EmptyDataset("empty batch");
  NetCache cache;
  run_forward(spec_, params, batch, training, cache);
  FocalResult focal = focal_loss(cache.logits, batch, cfg.focal_alpha,
                                 cfg.focal_gamma, /*want_grad=*/false);
  if (!std::isfinite(focal.loss)) throw NonFiniteLoss("forward loss is not finite");
  return {focal.loss, std::move(cache.logits.v)};
}

double SegNet::loss_and_gradient(ParameterSet& params,
                                 const std::vector<const SynthImage*>& batch,
                                 const TrainConfig& cfg, ParameterSet& grad,
                                 bool update_buffers) const {
  if (batch.empty()) throw EmptyDataset("empty batch");
  NetCache cache;
  run_forward(spec_, params, batch, /*training=*/true, cache);
  FocalResult focal = focal_loss(cache.logits, batch, cfg.focal_alpha,
                                 cfg.focal_gamma, /*want_grad=*/true);

  Act g;
  conv_backward(cache.head_in, params.at("head.weight").values,
                spec_.num_classes, 1, focal.g_logits, g,
                grad.at("head.weight").values, grad.at("head.bias").values);

  for (std::size_t i = spec_.channel_widths.size(); i-- > 0;) {
    LayerCache& lc = cache.layers[i];
    Act g_norm_out;
    relu_backward(lc.norm_out, g, g_norm_out);
    Act g_conv_out;
    if (spec_.normalization == Normalization::kNone) {
      g_conv_out = std::move(g_norm_out);
    } else {
      std::string ntag = "norm" + std::to_string(i);
      norm_backward(g_norm_out, lc.norm, params.at(ntag + ".gamma").values,
                    spec_.group_count,
                    spec_.normalization == Normalization::kGroupStats,
                    g_conv_out, grad.at(ntag + ".gamma").values,
                    grad.at(ntag + ".beta").values);
    }
    std::string tag = "conv" + std::to_string(i);
    conv_backward(lc.conv_in, params.at(tag + ".weight").values,
                  spec_.channel_widths[i], 3, g_conv_out, g,
                  grad.at(tag + ".weight").values,
                  grad.at(tag + ".bias").values);
  }

  if (update_buffers && spec_.normalization == Normalization::kBatchStats) {
    for (std::size_t i = 0; i < spec_.channel_widths.size(); ++i) {
      const NormCache& nc = cache.layers[i].norm;
      std::string ntag = "norm" + std::to_string(i);
      auto& rm = params.at(ntag + ".running_mean").values;
      auto& rv = params.at(ntag + ".running_var").values;
      for (std::size_t ci = 0; ci < rm.size(); ++ci) {
        double var = 1.0 / (nc.inv_std[ci] * nc.inv_std[ci]) - kNormEps;
        rm[ci] = static_cast<float>(kRunningMomentum * rm[ci] +
                                    (1.0 - kRunningMomentum) * nc.mean[ci]);
        rv[ci] = static_cast<float>(kRunningMomentum * rv[ci] +
                                    (1.0 - kRunningMomentum) * var);
      }
    }
  }
  if (!std::isfinite(focal.loss)) throw NonFiniteLoss("training loss is not finite");
  return focal.loss;
}

std::vector<std::uint8_t> SegNet::predict(const ParameterSet& params,
                                          const SynthImage& image) const {
  TrainConfig cfg;  // loss value unused here
  std::vector<const SynthImage*> batch{&image};
  ForwardResult fr = forward_loss(params, batch, cfg, /*training=*/false);
  std::size_t hw = static_cast<std::size_t>(spec_.height) * spec_.width;
  std::vector<std::uint8_t> mask(hw, 0);
  for (std::size_t px = 0; px < hw; ++px) {
    double best = 0.0;
    std::uint8_t best_class = 0;
    for (std::uint32_t k = 0; k < spec_.num_classes; ++k) {
      double z = fr.scores[k * hw + px];
      if (z > 0.0 && (best_class == 0 || z > best)) {
        best = z;
        best_class = static_cast<std::uint8_t>(k + 1);
      }
    }
    mask[px] = best_class;
  }
  return mask;
}

SegNetObjective::SegNetObjective(ModelSpec spec, Dataset train, Dataset test)
    : net_(std::move(spec)), train_(std::move(train)), test_(std::move(test)) {}

ParameterSet SegNetObjective::initial_params(std::uint64_t seed) const {
  return net_.initial_params(seed);
}

double SegNetObjective::train_step(ParameterSet& params,
                                   std::span<const std::size_t> batch,
                                   ParameterSet& grad, const TrainConfig& cfg) {
  std::vector<const SynthImage*> images;
  images.reserve(batch.size());
  for (std::size_t idx : batch) images.push_back(&train_[idx]);
  return net_.loss_and_gradient(params, images, cfg, grad,
                                /*update_buffers=*/true);
}

double SegNetObjective::loss(const ParameterSet& params,
                             std::span<const std::size_t> batch,
                             const TrainConfig& cfg) const {
  std::vector<const SynthImage*> images;
  images.reserve(batch.size());
  for (std::size_t idx : batch) images.push_back(&train_[idx]);
  return net_.forward_loss(params, images, cfg, /*training=*/false).loss;
}

nlohmann::json SegNetObjective::evaluate(const ParameterSet& params,
                                         const TrainConfig& cfg) const {
  if (test_.empty()) {
    return {{"loss", full_dataset_loss(*this, params, cfg)}};
  }
  std::vector<std::vector<std::uint8_t>> preds;
  preds.reserve(test_.size());
  double loss_sum = 0.0;
  for (const auto& img : test_) {
    preds.push_back(net_.predict(params, img));
    std::vector<const SynthImage*> one{&img};
    loss_sum += net_.forward_loss(params, one, cfg, /*training=*/false).loss;
  }
  MetricReport report =
      evaluate_masks(preds, test_, net_.spec().num_classes);
  nlohmann::json j = report.to_json();
  j["loss"] = loss_sum / static_cast<double>(test_.size());
  j["test_images"] = test_.size();
  return j;
}

}  // namespace fedseg
