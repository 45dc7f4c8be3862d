#include "medcl/segnet.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>
#include <utility>

#include "medcl/error.hpp"
#include "medcl/rng.hpp"
#include "model_io.hpp"
#include "serialize_util.hpp"

namespace medcl {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

struct ConvDef {
  std::string name;
  int cin = 0;
  int cout = 0;
  int ksize = 3;
  bool relu = true;
  int64_t w_off = 0;
  int64_t b_off = 0;

  int64_t weight_count() const { return static_cast<int64_t>(cout) * cin * ksize * ksize; }
};

struct Plan {
  std::vector<ConvDef> convs;
  int64_t total = 0;
};

int level_channels(const ModelSpec& spec, int level) { return spec.base_width << level; }

// Convolutions in execution order: encoder blocks top-down, bottleneck,
// decoder blocks bottom-up, then the two 1x1 heads. Each block is two 3x3
// convolutions with ReLU.
Plan build_plan(const ModelSpec& spec) {
  Plan plan;
  int64_t cursor = 0;
  auto add = [&](std::string name, int cin, int cout, int ksize, bool relu) {
    ConvDef def{std::move(name), cin, cout, ksize, relu, cursor, 0};
    cursor += def.weight_count();
    def.b_off = cursor;
    cursor += cout;
    plan.convs.push_back(std::move(def));
  };
  const int d = spec.depth;
  for (int i = 0; i < d; ++i) {
    const int cin = i == 0 ? 1 : level_channels(spec, i - 1);
    const int ch = level_channels(spec, i);
    add("enc" + std::to_string(i) + ".conv1", cin, ch, 3, true);
    add("enc" + std::to_string(i) + ".conv2", ch, ch, 3, true);
  }
  add("bott.conv1", level_channels(spec, d - 1), level_channels(spec, d), 3, true);
  add("bott.conv2", level_channels(spec, d), level_channels(spec, d), 3, true);
  for (int i = d - 1; i >= 0; --i) {
    const int up = i == d - 1 ? level_channels(spec, d) : level_channels(spec, i + 1);
    const int ch = level_channels(spec, i);
    add("dec" + std::to_string(i) + ".conv1", ch + up, ch, 3, true);
    add("dec" + std::to_string(i) + ".conv2", ch, ch, 3, true);
  }
  add("head_cls", level_channels(spec, 0), spec.head_a_channels(), 1, false);
  add("head_comb", level_channels(spec, 0), spec.head_b_channels(), 1, false);
  plan.total = cursor;
  return plan;
}

std::vector<ParamEntry> plan_layout(const Plan& plan) {
  std::vector<ParamEntry> layout;
  layout.reserve(plan.convs.size() * 2);
  for (const ConvDef& c : plan.convs) {
    layout.push_back({c.name + ".w", {c.cout, c.cin, c.ksize, c.ksize}, c.w_off, c.weight_count()});
    layout.push_back({c.name + ".b", {c.cout}, c.b_off, c.cout});
  }
  return layout;
}

// Conv indices inside the plan, mirroring build_plan's ordering.
int enc_conv(int level, int which) { return 2 * level + which; }
int bott_conv(const ModelSpec& spec, int which) { return 2 * spec.depth + which; }
int dec_conv(const ModelSpec& spec, int level, int which) {
  return 2 * spec.depth + 2 + 2 * (spec.depth - 1 - level) + which;
}
int head_cls_conv(const ModelSpec& spec) { return 4 * spec.depth + 2; }
int head_comb_conv(const ModelSpec& spec) { return 4 * spec.depth + 3; }

// Unrolls 3x3 neighborhoods (zero padding) into a (cin*9) x (H*W) matrix so
// the convolution becomes one GEMM.
void im2col3(const Tensor3& in, RowMat& m) {
  const int ch = in.channels(), h = in.height(), w = in.width();
  const auto n = static_cast<Eigen::Index>(h) * w;
  m.resize(static_cast<Eigen::Index>(ch) * 9, n);
  for (int c = 0; c < ch; ++c) {
    for (int dr = -1; dr <= 1; ++dr) {
      for (int dc = -1; dc <= 1; ++dc) {
        const int row = c * 9 + (dr + 1) * 3 + (dc + 1);
        double* dst = m.data() + static_cast<size_t>(row) * n;
        for (int r = 0; r < h; ++r) {
          const int sr = r + dr;
          for (int cc = 0; cc < w; ++cc) {
            const int sc = cc + dc;
            dst[r * w + cc] =
                (sr >= 0 && sr < h && sc >= 0 && sc < w) ? in(c, sr, sc) : 0.0;
          }
        }
      }
    }
  }
}

Tensor3 conv_apply(const ConvDef& def, const Eigen::VectorXd& params, const Tensor3& in,
                   RowMat& scratch) {
  const int h = in.height(), w = in.width();
  const auto n = static_cast<Eigen::Index>(h) * w;
  ConstMapMat wmat(params.data() + def.w_off, def.cout, def.cin * def.ksize * def.ksize);
  Eigen::Map<const Eigen::VectorXd> bias(params.data() + def.b_off, def.cout);
  Tensor3 out(def.cout, h, w);
  MapMat outm(out.data(), def.cout, n);
  if (def.ksize == 1) {
    ConstMapMat inm(in.data(), def.cin, n);
    outm.noalias() = wmat * inm;
  } else {
    im2col3(in, scratch);
    outm.noalias() = wmat * scratch;
  }
  outm.colwise() += bias;
  return out;
}

// grad_out is the gradient at the conv's pre-activation output. Accumulates
// weight/bias gradients and returns the gradient at the conv input.
Tensor3 conv_apply_backward(const ConvDef& def, const Eigen::VectorXd& params, const Tensor3& in,
                            const Tensor3& grad_out, Eigen::VectorXd& grad_params,
                            RowMat& scratch) {
  const int h = in.height(), w = in.width();
  const auto n = static_cast<Eigen::Index>(h) * w;
  ConstMapMat wmat(params.data() + def.w_off, def.cout, def.cin * def.ksize * def.ksize);
  ConstMapMat gout(grad_out.data(), def.cout, n);
  MapMat gw(grad_params.data() + def.w_off, def.cout, def.cin * def.ksize * def.ksize);
  Eigen::Map<Eigen::VectorXd> gb(grad_params.data() + def.b_off, def.cout);
  gb += gout.rowwise().sum();
  Tensor3 gin(def.cin, h, w);
  if (def.ksize == 1) {
    ConstMapMat inm(in.data(), def.cin, n);
    gw.noalias() += gout * inm.transpose();
    MapMat ginm(gin.data(), def.cin, n);
    ginm.noalias() = wmat.transpose() * gout;
    return gin;
  }
  im2col3(in, scratch);
  gw.noalias() += gout * scratch.transpose();
  RowMat gcols = wmat.transpose() * gout;  // (cin*9) x n
  for (int c = 0; c < def.cin; ++c) {
    for (int dr = -1; dr <= 1; ++dr) {
      for (int dc = -1; dc <= 1; ++dc) {
        const int row = c * 9 + (dr + 1) * 3 + (dc + 1);
        const double* src = gcols.data() + static_cast<size_t>(row) * n;
        for (int r = 0; r < h; ++r) {
          const int sr = r + dr;
          if (sr < 0 || sr >= h) continue;
          for (int cc = 0; cc < w; ++cc) {
            const int sc = cc + dc;
            if (sc < 0 || sc >= w) continue;
            gin(c, sr, sc) += src[r * w + cc];
          }
        }
      }
    }
  }
  return gin;
}

Tensor3 maxpool2(const Tensor3& in, std::vector<uint8_t>& argmax) {
  const int ch = in.channels(), ho = in.height() / 2, wo = in.width() / 2;
  Tensor3 out(ch, ho, wo);
  argmax.assign(static_cast<size_t>(ch) * ho * wo, 0);
  size_t idx = 0;
  for (int c = 0; c < ch; ++c) {
    for (int r = 0; r < ho; ++r) {
      for (int cc = 0; cc < wo; ++cc, ++idx) {
        double best = in(c, 2 * r, 2 * cc);
        uint8_t which = 0;
        for (int k = 1; k < 4; ++k) {
          const double v = in(c, 2 * r + k / 2, 2 * cc + k % 2);
          if (v > best) {
            best = v;
            which = static_cast<uint8_t>(k);
          }
        }
        out(c, r, cc) = best;
        argmax[idx] = which;
      }
    }
  }
  return out;
}

Tensor3 maxpool2_backward(const Tensor3& grad_out, const std::vector<uint8_t>& argmax) {
  const int ch = grad_out.channels(), ho = grad_out.height(), wo = grad_out.width();
  Tensor3 gin(ch, ho * 2, wo * 2);
  size_t idx = 0;
  for (int c = 0; c < ch; ++c) {
    for (int r = 0; r < ho; ++r) {
      for (int cc = 0; cc < wo; ++cc, ++idx) {
        const int k = argmax[idx];
        gin(c, 2 * r + k / 2, 2 * cc + k % 2) = grad_out(c, r, cc);
      }
    }
  }
  return gin;
}

Tensor3 upsample2(const Tensor3& in) {
  const int ch = in.channels(), h = in.height(), w = in.width();
  Tensor3 out(ch, h * 2, w * 2);
  for (int c = 0; c < ch; ++c) {
    for (int r = 0; r < 2 * h; ++r) {
      for (int cc = 0; cc < 2 * w; ++cc) out(c, r, cc) = in(c, r / 2, cc / 2);
    }
  }
  return out;
}

Tensor3 upsample2_backward(const Tensor3& grad_out) {
  const int ch = grad_out.channels(), h = grad_out.height() / 2, w = grad_out.width() / 2;
  Tensor3 gin(ch, h, w);
  for (int c = 0; c < ch; ++c) {
    for (int r = 0; r < 2 * h; ++r) {
      for (int cc = 0; cc < 2 * w; ++cc) gin(c, r / 2, cc / 2) += grad_out(c, r, cc);
    }
  }
  return gin;
}

Tensor3 concat_channels(const Tensor3& a, const Tensor3& b) {
  Tensor3 out(a.channels() + b.channels(), a.height(), a.width());
  std::copy(a.data(), a.data() + a.size(), out.data());
  std::copy(b.data(), b.data() + b.size(), out.data() + a.size());
  return out;
}

void relu_inplace(Tensor3& t) {
  double* p = t.data();
  for (size_t i = 0; i < t.size(); ++i) p[i] = p[i] > 0.0 ? p[i] : 0.0;
}

void relu_backward_inplace(Tensor3& grad, const Tensor3& pre) {
  double* g = grad.data();
  const double* z = pre.data();
  for (size_t i = 0; i < grad.size(); ++i) {
    if (z[i] <= 0.0) g[i] = 0.0;
  }
}

double params_checksum(const Eigen::VectorXd& values) { return values.sum(); }

}  // namespace

void ModelSpec::validate() const {
  require(depth >= 2 && depth <= 4, ErrorCode::ConfigError,
          "ModelSpec: depth must be between 2 and 4");
  require(base_width >= 2 && base_width <= 64, ErrorCode::ConfigError,
          "ModelSpec: base_width must be between 2 and 64");
  require(num_classes >= 2 && num_classes <= 16, ErrorCode::ConfigError,
          "ModelSpec: num_classes must be between 2 and 16");
  const int stride = 1 << depth;
  require(input_size > 0 && input_size % stride == 0 && input_size / stride >= 2,
          ErrorCode::ConfigError,
          "ModelSpec: input_size must be a positive multiple of 2^depth with at least "
          "2 pixels left at the bottleneck");
}

ModelParams init_model(const ModelSpec& spec) {
  spec.validate();
  const Plan plan = build_plan(spec);
  ModelParams params;
  params.spec = spec;
  params.layout = plan_layout(plan);
  params.values = Eigen::VectorXd::Zero(plan.total);
  Rng rng(derive_seed(spec.seed, "segnet/init"));
  for (const ConvDef& c : plan.convs) {
    // Fan-in scaling keeps activation variance roughly constant through the
    // ReLU stack. Biases start at zero.
    const double stddev = std::sqrt(2.0 / (static_cast<double>(c.cin) * c.ksize * c.ksize));
    for (int64_t j = 0; j < c.weight_count(); ++j) {
      params.values[c.w_off + j] = stddev * rng.normal();
    }
  }
  return params;
}

ForwardOutput forward(const ModelParams& params, const ImageF& image, ForwardCache* cache) {
  const ModelSpec& spec = params.spec;
  spec.validate();
  require(image.height() == spec.input_size && image.width() == spec.input_size,
          ErrorCode::ShapeMismatch, "forward: image shape does not match the model input size");
  const Plan plan = build_plan(spec);
  require(params.values.size() == plan.total, ErrorCode::ShapeMismatch,
          "forward: parameter vector length does not match the architecture");

  const int d = spec.depth;
  if (cache) {
    cache->valid = false;
    cache->conv_inputs.assign(plan.convs.size(), Tensor3());
    cache->conv_pre.assign(plan.convs.size(), Tensor3());
    cache->pool_argmax.assign(d, {});
    cache->enc_outputs.assign(d, Tensor3());
  }

  RowMat scratch;
  auto run_conv = [&](int idx, Tensor3 in) {
    const ConvDef& def = plan.convs[idx];
    Tensor3 pre = conv_apply(def, params.values, in, scratch);
    Tensor3 act = pre;
    if (def.relu) relu_inplace(act);
    if (cache) {
      cache->conv_inputs[idx] = std::move(in);
      cache->conv_pre[idx] = std::move(pre);
    }
    return act;
  };

  Tensor3 x(1, spec.input_size, spec.input_size);
  std::copy(image.data(), image.data() + image.size(), x.data());

  std::vector<Tensor3> skips(d);
  for (int i = 0; i < d; ++i) {
    x = run_conv(enc_conv(i, 0), std::move(x));
    x = run_conv(enc_conv(i, 1), std::move(x));
    skips[i] = x;
    std::vector<uint8_t> argmax;
    x = maxpool2(x, argmax);
    if (cache) cache->pool_argmax[i] = std::move(argmax);
  }
  x = run_conv(bott_conv(spec, 0), std::move(x));
  x = run_conv(bott_conv(spec, 1), std::move(x));
  for (int i = d - 1; i >= 0; --i) {
    Tensor3 up = upsample2(x);
    x = concat_channels(skips[i], up);
    x = run_conv(dec_conv(spec, i, 0), std::move(x));
    x = run_conv(dec_conv(spec, i, 1), std::move(x));
  }
  if (cache) {
    for (int i = 0; i < d; ++i) cache->enc_outputs[i] = std::move(skips[i]);
  }

  Tensor3 logits_cls = run_conv(head_cls_conv(spec), x);
  Tensor3 logits_comb = run_conv(head_comb_conv(spec), std::move(x));

  const int m = spec.num_classes;
  const int h = spec.input_size, w = spec.input_size;
  Tensor3 class_probs(m + 1, h, w);
  for (int r = 0; r < h; ++r) {
    for (int cc = 0; cc < w; ++cc) {
      double peak = logits_cls(0, r, cc);
      for (int c = 1; c <= m; ++c) peak = std::max(peak, logits_cls(c, r, cc));
      double total = 0.0;
      for (int c = 0; c <= m; ++c) {
        const double e = std::exp(logits_cls(c, r, cc) - peak);
        class_probs(c, r, cc) = e;
        total += e;
      }
      for (int c = 0; c <= m; ++c) class_probs(c, r, cc) /= total;
    }
  }
  Tensor3 combined(m - 1, h, w);
  for (size_t i = 0; i < combined.size(); ++i) {
    combined.data()[i] = 1.0 / (1.0 + std::exp(-logits_comb.data()[i]));
  }

  ForwardOutput out;
  out.class_probs = class_probs;
  out.probs.reset(2 * m - 1, h, w);
  for (int c = 0; c < m; ++c) {
    std::copy(class_probs.plane(c + 1), class_probs.plane(c + 1) + class_probs.plane_size(),
              out.probs.plane(c));
  }
  for (int c = 0; c < m - 1; ++c) {
    std::copy(combined.plane(c), combined.plane(c) + combined.plane_size(),
              out.probs.plane(m + c));
  }

  if (cache) {
    cache->class_probs = std::move(class_probs);
    cache->combined_probs = std::move(combined);
    cache->params_checksum = params_checksum(params.values);
    cache->valid = true;
  }
  return out;
}

Eigen::VectorXd backward(const ModelParams& params, ForwardCache& cache,
                         const Tensor3& grad_probs, const Tensor3& grad_class_probs) {
  const ModelSpec& spec = params.spec;
  spec.validate();
  const Plan plan = build_plan(spec);
  require(params.values.size() == plan.total, ErrorCode::ShapeMismatch,
          "backward: parameter vector length does not match the architecture");
  require(cache.valid, ErrorCode::InvalidArgument, "backward: forward cache is empty");
  require(params_checksum(params.values) == cache.params_checksum, ErrorCode::InvalidArgument,
          "backward: stale forward cache (parameters changed since forward)");
  const int m = spec.num_classes;
  const int h = spec.input_size, w = spec.input_size;
  require(grad_probs.channels() == 2 * m - 1 && grad_probs.height() == h &&
              grad_probs.width() == w,
          ErrorCode::ShapeMismatch, "backward: grad_probs has the wrong shape");
  require(grad_class_probs.channels() == m + 1 && grad_class_probs.height() == h &&
              grad_class_probs.width() == w,
          ErrorCode::ShapeMismatch, "backward: grad_class_probs has the wrong shape");

  Eigen::VectorXd grad = Eigen::VectorXd::Zero(plan.total);
  const int d = spec.depth;

  // Fold the single-class rows of grad_probs into the softmax head gradient;
  // the background channel only ever receives gradient via grad_class_probs.
  Tensor3 glogits_cls(m + 1, h, w);
  for (int r = 0; r < h; ++r) {
    for (int cc = 0; cc < w; ++cc) {
      double dot = 0.0;
      for (int c = 0; c <= m; ++c) {
        double g = grad_class_probs(c, r, cc);
        if (c >= 1) g += grad_probs(c - 1, r, cc);
        glogits_cls(c, r, cc) = g;  // reuse as scratch for the incoming grad
        dot += g * cache.class_probs(c, r, cc);
      }
      for (int c = 0; c <= m; ++c) {
        glogits_cls(c, r, cc) =
            cache.class_probs(c, r, cc) * (glogits_cls(c, r, cc) - dot);
      }
    }
  }
  Tensor3 glogits_comb(m - 1, h, w);
  for (size_t i = 0; i < glogits_comb.size(); ++i) {
    const double s = cache.combined_probs.data()[i];
    glogits_comb.data()[i] = grad_probs.data()[m * static_cast<size_t>(h) * w + i] * s * (1.0 - s);
  }

  RowMat scratch;
  auto back_conv = [&](int idx, Tensor3 grad_out) {
    const ConvDef& def = plan.convs[idx];
    if (def.relu) relu_backward_inplace(grad_out, cache.conv_pre[idx]);
    return conv_apply_backward(def, params.values, cache.conv_inputs[idx], grad_out, grad,
                               scratch);
  };

  Tensor3 gx = back_conv(head_cls_conv(spec), std::move(glogits_cls));
  {
    Tensor3 gx2 = back_conv(head_comb_conv(spec), std::move(glogits_comb));
    double* a = gx.data();
    const double* b = gx2.data();
    for (size_t i = 0; i < gx.size(); ++i) a[i] += b[i];
  }

  // Decoder blocks in reverse execution order (top level first), collecting
  // the gradient that flows back into each skip connection.
  std::vector<Tensor3> skip_grads(d);
  for (int i = 0; i < d; ++i) {
    gx = back_conv(dec_conv(spec, i, 1), std::move(gx));
    gx = back_conv(dec_conv(spec, i, 0), std::move(gx));
    const int ch_skip = level_channels(spec, i);
    const int ch_up = gx.channels() - ch_skip;
    Tensor3 gskip(ch_skip, gx.height(), gx.width());
    Tensor3 gup(ch_up, gx.height(), gx.width());
    std::copy(gx.data(), gx.data() + gskip.size(), gskip.data());
    std::copy(gx.data() + gskip.size(), gx.data() + gx.size(), gup.data());
    skip_grads[i] = std::move(gskip);
    gx = upsample2_backward(gup);
  }

  gx = back_conv(bott_conv(spec, 1), std::move(gx));
  gx = back_conv(bott_conv(spec, 0), std::move(gx));

  for (int i = d - 1; i >= 0; --i) {
    gx = maxpool2_backward(gx, cache.pool_argmax[i]);
    double* a = gx.data();
    const double* b = skip_grads[i].data();
    for (size_t j = 0; j < gx.size(); ++j) a[j] += b[j];
    gx = back_conv(enc_conv(i, 1), std::move(gx));
    gx = back_conv(enc_conv(i, 0), std::move(gx));
  }
  return grad;
}

namespace detail {

nlohmann::ordered_json spec_to_json(const ModelSpec& spec) {
  nlohmann::ordered_json j;
  j["input_size"] = spec.input_size;
  j["base_width"] = spec.base_width;
  j["depth"] = spec.depth;
  j["num_classes"] = spec.num_classes;
  j["seed"] = spec.seed;
  return j;
}

ModelSpec spec_from_json(const nlohmann::json& j) {
  ModelSpec spec;
  spec.input_size = j.at("input_size").get<int>();
  spec.base_width = j.at("base_width").get<int>();
  spec.depth = j.at("depth").get<int>();
  spec.num_classes = j.at("num_classes").get<int>();
  spec.seed = j.at("seed").get<uint64_t>();
  return spec;
}

nlohmann::ordered_json layout_to_json(const std::vector<ParamEntry>& layout) {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const ParamEntry& e : layout) {
    nlohmann::ordered_json j;
    j["name"] = e.name;
    j["shape"] = e.shape;
    j["offset"] = e.offset;
    j["count"] = e.count;
    arr.push_back(std::move(j));
  }
  return arr;
}

std::vector<ParamEntry> expected_layout(const ModelSpec& spec) {
  return plan_layout(build_plan(spec));
}

std::vector<ParamEntry> layout_from_json(const nlohmann::json& j) {
  std::vector<ParamEntry> layout;
  for (const auto& e : j) {
    ParamEntry entry;
    entry.name = e.at("name").get<std::string>();
    entry.shape = e.at("shape").get<std::vector<int>>();
    entry.offset = e.at("offset").get<int64_t>();
    entry.count = e.at("count").get<int64_t>();
    layout.push_back(std::move(entry));
  }
  return layout;
}

}  // namespace detail

void save_model(const ModelParams& params, const std::filesystem::path& path) {
  params.spec.validate();
  const Plan plan = build_plan(params.spec);
  require(params.values.size() == plan.total, ErrorCode::ShapeMismatch,
          "save_model: parameter vector length does not match the architecture");
  nlohmann::ordered_json header;
  header["format_version"] = detail::kCheckpointFormatVersion;
  header["kind"] = "model";
  header["spec"] = detail::spec_to_json(params.spec);
  header["layout"] = detail::layout_to_json(params.layout);
  header["payload_doubles"] = params.values.size();
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(out.good(), ErrorCode::IoError, "cannot open for writing: " + path.string());
  detail::write_u64_le(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  detail::write_doubles_le(out, params.values.data(), static_cast<size_t>(params.values.size()));
  require(out.good(), ErrorCode::IoError, "failed writing model checkpoint: " + path.string());
}

ModelParams load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorCode::IoError, "cannot open model checkpoint: " + path.string());
  const uint64_t header_len = detail::read_u64_le(in);
  require(header_len > 0 && header_len < (64u << 20), ErrorCode::FormatError,
          "model checkpoint header length is implausible");
  const std::string text = detail::read_bytes(in, header_len);
  const nlohmann::json header = nlohmann::json::parse(text, nullptr, false);
  require(!header.is_discarded(), ErrorCode::FormatError,
          "model checkpoint header is not valid JSON");

  ModelParams params;
  uint64_t payload = 0;
  try {
    const int version = header.at("format_version").get<int>();
    require(version == detail::kCheckpointFormatVersion, ErrorCode::VersionMismatch,
            "unsupported checkpoint format version " + std::to_string(version));
    require(header.at("kind").get<std::string>() == "model", ErrorCode::FormatError,
            "checkpoint is not a model checkpoint");
    params.spec = detail::spec_from_json(header.at("spec"));
    params.spec.validate();
    const Plan plan = build_plan(params.spec);
    params.layout = detail::layout_from_json(header.at("layout"));
    require(params.layout == plan_layout(plan), ErrorCode::FormatError,
            "checkpoint layout does not match its model spec");
    payload = header.at("payload_doubles").get<uint64_t>();
    require(payload == static_cast<uint64_t>(plan.total), ErrorCode::FormatError,
            "checkpoint payload size does not match the architecture");
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::FormatError, std::string("malformed model checkpoint header: ") + e.what());
  }
  params.values.resize(static_cast<Eigen::Index>(payload));
  detail::read_doubles_le(in, params.values.data(), payload);
  require(in.good(), ErrorCode::FormatError, "model checkpoint payload is truncated");
  return params;
}

}  // namespace medcl
