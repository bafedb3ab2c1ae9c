#include "daunet/model.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>

#include "daunet/error.hpp"
#include "daunet/rng.hpp"
#include "json.hpp"

namespace daunet {

std::string to_string(BottleneckVariant v) { return v == BottleneckVariant::kWide ? "wide" : "narrow"; }

BottleneckVariant parse_bottleneck_variant(const std::string& s) {
  if (s == "wide") return BottleneckVariant::kWide;
  if (s == "narrow") return BottleneckVariant::kNarrow;
  throw ConfigError("bottleneck_variant must be 'wide' or 'narrow', got '" + s + "'");
}

void ModelConfig::validate() const {
  if (in_channels < 1) throw ConfigError("model.in_channels must be >= 1");
  if (num_classes < 1) throw ConfigError("model.num_classes must be >= 1");
  if (base_channels < 1) throw ConfigError("model.base_channels must be >= 1");
  if (depth < 1) throw ConfigError("model.depth must be >= 1");
  if (image_size < 1 || image_size % (1 << depth) != 0) {
    throw ConfigError("model.image_size " + std::to_string(image_size) +
                      " must be divisible by 2^depth = " + std::to_string(1 << depth));
  }
  // The compressed bottleneck width C/4 must be a whole number of channels.
  if (use_deform_bottleneck && (base_channels << depth) % 4 != 0) {
    throw ConfigError("deformable bottleneck needs bottleneck width divisible by 4");
  }
  simam.validate();
}

std::string model_config_to_json(const ModelConfig& cfg) {
  nlohmann::json j = {
      {"in_channels", cfg.in_channels},
      {"num_classes", cfg.num_classes},
      {"base_channels", cfg.base_channels},
      {"depth", cfg.depth},
      {"use_deform_bottleneck", cfg.use_deform_bottleneck},
      {"use_simam", cfg.use_simam},
      {"image_size", cfg.image_size},
      {"bottleneck_variant", to_string(cfg.bottleneck_variant)},
      {"simam_lambda", cfg.simam.lambda},
      {"simam_epsilon", cfg.simam.epsilon},
  };
  return j.dump();
}

ModelConfig model_config_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
    ModelConfig cfg;
    cfg.in_channels = j.at("in_channels").get<int>();
    cfg.num_classes = j.at("num_classes").get<int>();
    cfg.base_channels = j.at("base_channels").get<int>();
    cfg.depth = j.at("depth").get<int>();
    cfg.use_deform_bottleneck = j.at("use_deform_bottleneck").get<bool>();
    cfg.use_simam = j.at("use_simam").get<bool>();
    cfg.image_size = j.at("image_size").get<int>();
    cfg.bottleneck_variant = parse_bottleneck_variant(j.at("bottleneck_variant").get<std::string>());
    cfg.simam.lambda = j.at("simam_lambda").get<double>();
    cfg.simam.epsilon = j.at("simam_epsilon").get<double>();
    cfg.validate();
    return cfg;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("model config echo: ") + e.what());
  }
}

Model::Model(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg), seed_(seed) {
  cfg_.validate();
  const std::size_t base = static_cast<std::size_t>(cfg_.base_channels);
  const std::size_t depth = static_cast<std::size_t>(cfg_.depth);

  std::size_t c = static_cast<std::size_t>(cfg_.in_channels);
  for (std::size_t i = 0; i < depth; ++i) {
    const std::size_t width = base << i;
    encoder_.push_back(make_block("enc" + std::to_string(i + 1), c, width));
    c = width;
  }

  const std::size_t bott = base << depth;
  if (cfg_.use_deform_bottleneck) {
    const std::size_t quarter = bott / 4;
    const bool wide = cfg_.bottleneck_variant == BottleneckVariant::kWide;
    const std::size_t deform_out = wide ? bott : quarter;
    auto& b = deform_bottleneck_;
    b.compress = make_conv("bottleneck.compress", c, quarter, 1, 0);
    b.bn1 = make_norm("bottleneck.bn1", quarter);
    Tensor w = init_uniform("bottleneck.deform.weight", {deform_out, quarter, 3, 3}, quarter * 9);
    Tensor bias = Tensor::zeros({deform_out}, true);
    b.deform = DeformConvParams::zero_branch(w, bias);
    register_param("bottleneck.deform.weight", b.deform.main_weight);
    register_param("bottleneck.deform.bias", b.deform.main_bias);
    register_param("bottleneck.deform.offset.weight", b.deform.branch.weight);
    register_param("bottleneck.deform.offset.bias", b.deform.branch.bias);
    b.bn2 = make_norm("bottleneck.bn2", deform_out);
    b.expand = make_conv("bottleneck.expand", deform_out, bott, 1, 0);
    b.bn3 = make_norm("bottleneck.bn3", bott);
    for (double v : b.deform.branch.weight.data()) {
      if (v != 0.0) throw std::logic_error("deformable offset branch must start at zero");
    }
  } else {
    plain_bottleneck_ = make_block("bottleneck", c, bott);
  }

  decoder_.resize(depth);
  c = bott;
  for (std::size_t i = depth; i-- > 0;) {
    const std::size_t width = base << i;
    const std::string name = "dec" + std::to_string(i + 1);
    UpStage& st = decoder_[i];
    st.up.weight = init_uniform(name + ".up.weight", {c, width, 2, 2}, c * 4);
    st.up.bias = Tensor::zeros({width}, true);
    st.up.stride = 2;
    register_param(name + ".up.weight", st.up.weight);
    register_param(name + ".up.bias", st.up.bias);
    st.block = make_block(name, 2 * width, width);
    c = width;
  }
  head_ = make_conv("head", base, static_cast<std::size_t>(cfg_.num_classes), 1, 0);
}

Tensor Model::init_uniform(const std::string& name, const Shape& shape, std::size_t fan_in) {
  Rng rng(seed_, "init:" + name);
  const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
  std::vector<double> v(numel(shape));
  for (double& x : v) x = rng.uniform(-bound, bound);
  return Tensor::from_data(shape, std::move(v), true);
}

void Model::register_param(const std::string& name, const Tensor& t) { params_.push_back({name, t}); }
void Model::register_buffer(const std::string& name, const Tensor& t) { buffers_.push_back({name, t}); }

Model::ConvLayer Model::make_conv(const std::string& name, std::size_t cin, std::size_t cout,
                                  std::size_t k, std::size_t padding) {
  ConvLayer l;
  l.weight = init_uniform(name + ".weight", {cout, cin, k, k}, cin * k * k);
  l.bias = Tensor::zeros({cout}, true);
  l.padding = padding;
  register_param(name + ".weight", l.weight);
  register_param(name + ".bias", l.bias);
  return l;
}

Model::NormLayer Model::make_norm(const std::string& name, std::size_t channels) {
  NormLayer l;
  l.gamma = Tensor::full({channels}, 1.0, true);
  l.beta = Tensor::zeros({channels}, true);
  l.state = BatchNormState::for_channels(channels);
  register_param(name + ".weight", l.gamma);
  register_param(name + ".bias", l.beta);
  register_buffer(name + ".running_mean", l.state.running_mean);
  register_buffer(name + ".running_var", l.state.running_var);
  return l;
}

Model::ConvBlock Model::make_block(const std::string& name, std::size_t cin, std::size_t cout) {
  ConvBlock b;
  b.conv1 = make_conv(name + ".conv1", cin, cout, 3, 1);
  b.bn1 = make_norm(name + ".bn1", cout);
  b.conv2 = make_conv(name + ".conv2", cout, cout, 3, 1);
  b.bn2 = make_norm(name + ".bn2", cout);
  return b;
}

std::vector<NamedTensor> Model::state() const {
  std::vector<NamedTensor> all = params_;
  all.insert(all.end(), buffers_.begin(), buffers_.end());
  return all;
}

std::size_t Model::param_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.tensor.numel();
  return n;
}

void Model::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

Tensor Model::apply(const ConvLayer& l, const Tensor& x) const {
  return conv2d(x, l.weight, l.bias, l.stride, l.padding);
}

Tensor Model::apply(NormLayer& l, const Tensor& x) {
  return batchnorm2d(x, l.gamma, l.beta, l.state, training_);
}

Tensor Model::apply(ConvBlock& b, const Tensor& x) {
  Tensor h = relu(apply(b.bn1, apply(b.conv1, x)));
  return relu(apply(b.bn2, apply(b.conv2, h)));
}

Tensor Model::attend(const Tensor& x) const { return simam_attend(x, cfg_.simam); }

Tensor Model::apply_bottleneck(const Tensor& x, ForwardTrace* trace) {
  if (!cfg_.use_deform_bottleneck) return apply(plain_bottleneck_, x);
  auto& b = deform_bottleneck_;
  Tensor h = relu(apply(b.bn1, apply(b.compress, x)));
  DeformConvResult d = deform_conv2d_with_fields(h, b.deform);
  if (trace) {
    trace->bottleneck_offsets = d.fields.offsets.detach();
    trace->bottleneck_modulation = d.fields.modulation.detach();
  }
  h = relu(apply(b.bn2, d.output));
  h = relu(apply(b.bn3, apply(b.expand, h)));
  return cfg_.use_simam ? attend(h) : h;
}

Tensor Model::forward(const Tensor& batch, ForwardTrace* trace) {
  const std::size_t s = static_cast<std::size_t>(cfg_.image_size);
  if (batch.rank() != 4 || batch.dim(1) != static_cast<std::size_t>(cfg_.in_channels) ||
      batch.dim(2) != s || batch.dim(3) != s) {
    throw ShapeError("model input " + shape_str(batch.shape()) + " does not match (N, " +
                     std::to_string(cfg_.in_channels) + ", " + std::to_string(s) + ", " +
                     std::to_string(s) + ")");
  }
  std::vector<Tensor> skips;
  Tensor x = batch;
  for (auto& block : encoder_) {
    x = apply(block, x);
    skips.push_back(x);
    x = maxpool2d(x, 2);
  }
  x = apply_bottleneck(x, trace);
  for (std::size_t i = decoder_.size(); i-- > 0;) {
    UpStage& st = decoder_[i];
    Tensor up = conv_transpose2d(x, st.up.weight, st.up.bias, 2, 0);
    Tensor skip = cfg_.use_simam ? attend(skips[i]) : skips[i];
    x = apply(st.block, concat_channels(skip, up));
    if (cfg_.use_simam) x = attend(x);
  }
  return apply(head_, x);
}

std::vector<BlockSummary> Model::summary() const {
  std::vector<BlockSummary> rows;
  auto count_prefix = [this](const std::string& prefix) {
    std::size_t n = 0;
    for (const auto& p : params_) {
      if (p.name.rfind(prefix + ".", 0) == 0) n += p.tensor.numel();
    }
    return n;
  };
  const std::size_t base = static_cast<std::size_t>(cfg_.base_channels);
  std::size_t s = static_cast<std::size_t>(cfg_.image_size);
  const std::size_t depth = encoder_.size();
  for (std::size_t i = 0; i < depth; ++i) {
    const std::string name = "enc" + std::to_string(i + 1);
    rows.push_back({name, {base << i, s, s}, count_prefix(name)});
    s /= 2;
  }
  rows.push_back({"bottleneck", {base << depth, s, s}, count_prefix("bottleneck")});
  for (std::size_t i = depth; i-- > 0;) {
    s *= 2;
    const std::string name = "dec" + std::to_string(i + 1);
    rows.push_back({name, {base << i, s, s}, count_prefix(name)});
  }
  rows.push_back({"head", {static_cast<std::size_t>(cfg_.num_classes), s, s}, count_prefix("head")});
  return rows;
}

std::string Model::summary_table() const {
  std::ostringstream os;
  os << std::left << std::setw(14) << "block" << std::setw(20) << "output" << std::right
     << std::setw(12) << "params" << '\n';
  for (const auto& r : summary()) {
    os << std::left << std::setw(14) << r.name << std::setw(20) << shape_str(r.output)
       << std::right << std::setw(12) << r.params << '\n';
  }
  os << std::left << std::setw(34) << "total" << std::right << std::setw(12) << param_count()
     << '\n';
  return os.str();
}

Model build_unet(const ModelConfig& cfg, std::uint64_t seed) {
  if (cfg.use_deform_bottleneck || cfg.use_simam) {
    throw ConfigError("build_unet: the baseline takes neither the deformable bottleneck nor SimAM");
  }
  return Model(cfg, seed);
}

Model build_daunet(const ModelConfig& cfg, std::uint64_t seed) { return Model(cfg, seed); }

}  // namespace daunet
