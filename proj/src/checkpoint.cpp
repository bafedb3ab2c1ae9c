#include "daunet/checkpoint.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <limits>
#include <unordered_map>

#include "daunet/error.hpp"
#include "daunet/io.hpp"
#include "json.hpp"

namespace daunet {
namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");

constexpr char kMagic[4] = {'D', 'A', 'U', 'N'};

template <typename T>
void put(std::string& out, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  template <typename T>
  T get(const char* what) {
    need(sizeof(T), what);
    T value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }

  std::string take(std::size_t n, const char* what) {
    need(n, what);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  void read_doubles(double* dst, std::size_t n, const std::string& what) {
    if (n > remaining() / sizeof(double)) throw FormatError("checkpoint truncated in " + what);
    std::memcpy(dst, bytes_.data() + pos_, n * sizeof(double));
    pos_ += n * sizeof(double);
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n, const char* what) {
    if (n > remaining()) throw FormatError(std::string("checkpoint truncated in ") + what);
  }

  const std::string& bytes_;
  std::size_t pos_ = 0;
};

void put_tensor(std::string& out, const std::string& name, const Tensor& t) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
  out += name;
  put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape()) put<std::uint64_t>(out, d);
  auto data = t.data();
  out.append(reinterpret_cast<const char*>(data.data()), data.size() * sizeof(double));
}

}  // namespace

Checkpoint make_checkpoint(const Model& model, const AdamState* adam, int epoch,
                           std::map<std::string, double> metrics) {
  Checkpoint c;
  c.model = model.config();
  for (const auto& nt : model.state()) c.tensors.push_back({nt.name, nt.tensor.detach().clone()});
  if (adam) {
    AdamState copy = *adam;
    for (auto& t : copy.m) t = t.clone();
    for (auto& t : copy.v) t = t.clone();
    c.adam = std::move(copy);
  }
  c.epoch = epoch;
  c.metrics = std::move(metrics);
  return c;
}

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  nlohmann::json header;
  header["model"] = nlohmann::json::parse(model_config_to_json(ckpt.model));
  header["epoch"] = ckpt.epoch;
  nlohmann::json metrics = nlohmann::json::object();
  for (const auto& [k, v] : ckpt.metrics) {
    metrics[k] = std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr);
  }
  header["metrics"] = metrics;
  if (ckpt.adam) {
    header["adam"] = {{"t", ckpt.adam->t},
                      {"beta1", ckpt.adam->beta1},
                      {"beta2", ckpt.adam->beta2},
                      {"eps", ckpt.adam->eps}};
  }
  const std::string text = header.dump();

  std::size_t count = ckpt.tensors.size();
  if (ckpt.adam) count += ckpt.adam->m.size() + ckpt.adam->v.size();

  std::string out(kMagic, 4);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, text.size());
  out += text;
  put<std::uint64_t>(out, count);
  for (const auto& nt : ckpt.tensors) put_tensor(out, nt.name, nt.tensor);
  if (ckpt.adam) {
    const std::size_t np = ckpt.adam->m.size();
    if (ckpt.adam->v.size() != np || np > ckpt.tensors.size()) {
      throw ShapeError("checkpoint: Adam state does not match the parameter list");
    }
    for (std::size_t i = 0; i < np; ++i) put_tensor(out, "adam.m." + ckpt.tensors[i].name, ckpt.adam->m[i]);
    for (std::size_t i = 0; i < np; ++i) put_tensor(out, "adam.v." + ckpt.tensors[i].name, ckpt.adam->v[i]);
  }
  return out;
}

Checkpoint parse_checkpoint(const std::string& bytes) {
  Reader r(bytes);
  if (r.take(4, "magic") != std::string(kMagic, 4)) throw FormatError("checkpoint: bad magic");
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  }
  const auto header_len = r.get<std::uint64_t>("header length");
  if (header_len > r.remaining()) throw FormatError("checkpoint truncated in header");
  const std::string text = r.take(static_cast<std::size_t>(header_len), "header");

  Checkpoint c;
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
    c.model = model_config_from_json(header.at("model").dump());
    c.epoch = header.at("epoch").get<int>();
    for (const auto& [k, v] : header.at("metrics").items()) {
      c.metrics[k] = v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>();
    }
    if (header.contains("adam")) {
      AdamState a;
      a.t = header["adam"].at("t").get<std::uint64_t>();
      a.beta1 = header["adam"].at("beta1").get<double>();
      a.beta2 = header["adam"].at("beta2").get<double>();
      a.eps = header["adam"].at("eps").get<double>();
      c.adam = std::move(a);
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint header: ") + e.what());
  }

  const auto count = r.get<std::uint64_t>("tensor count");
  // Every tensor needs at least its name length and rank.
  if (count > r.remaining() / 8) throw FormatError("checkpoint: implausible tensor count");
  std::vector<NamedTensor> all;
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto name_len = r.get<std::uint32_t>("tensor name length");
    std::string name = r.take(name_len, "tensor name");
    const auto rank = r.get<std::uint32_t>("tensor rank");
    if (rank < 1 || rank > 4) {
      throw FormatError("checkpoint: tensor " + name + " has rank " + std::to_string(rank));
    }
    Shape shape;
    std::size_t total = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      const auto dim = r.get<std::uint64_t>("tensor dims");
      if (dim == 0 || dim > r.remaining() / 8 || total > r.remaining() / 8 / dim) {
        throw FormatError("checkpoint: tensor " + name + " has implausible dims");
      }
      shape.push_back(static_cast<std::size_t>(dim));
      total *= static_cast<std::size_t>(dim);
    }
    std::vector<double> values(total);
    r.read_doubles(values.data(), total, "tensor " + name);
    all.push_back({std::move(name), Tensor::from_data(shape, std::move(values))});
  }
  if (r.remaining() != 0) throw FormatError("checkpoint: trailing bytes after tensors");

  for (auto& nt : all) {
    if (nt.name.rfind("adam.", 0) != 0) c.tensors.push_back(std::move(nt));
  }
  if (c.adam) {
    std::unordered_map<std::string, Tensor> moments;
    for (auto& nt : all) {
      if (nt.name.rfind("adam.", 0) == 0) moments.emplace(nt.name, nt.tensor);
    }
    for (const auto& nt : c.tensors) {
      auto m = moments.find("adam.m." + nt.name);
      auto v = moments.find("adam.v." + nt.name);
      if (m == moments.end() || v == moments.end()) break;  // buffers carry no moments
      if (m->second.shape() != nt.tensor.shape() || v->second.shape() != nt.tensor.shape()) {
        throw ShapeError("checkpoint: Adam moment shape mismatch for " + nt.name);
      }
      c.adam->m.push_back(m->second);
      c.adam->v.push_back(v->second);
    }
    if (c.adam->m.size() * 2 != moments.size()) {
      throw FormatError("checkpoint: Adam moments do not match the parameter list");
    }
  }
  return c;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  write_file(path, serialize_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::string& path) { return parse_checkpoint(read_file(path)); }

void load_into(Model& model, const Checkpoint& ckpt) {
  const auto state = model.state();
  std::unordered_map<std::string, const Tensor*> by_name;
  for (const auto& nt : ckpt.tensors) {
    if (!by_name.emplace(nt.name, &nt.tensor).second) {
      throw FormatError("checkpoint: duplicate tensor " + nt.name);
    }
  }
  for (const auto& nt : state) {
    auto it = by_name.find(nt.name);
    if (it == by_name.end()) throw FormatError("checkpoint: missing tensor " + nt.name);
    if (it->second->shape() != nt.tensor.shape()) {
      throw ShapeError("checkpoint: parameter " + nt.name + " has shape " +
                       shape_str(it->second->shape()) + ", model expects " +
                       shape_str(nt.tensor.shape()));
    }
  }
  if (by_name.size() != state.size()) {
    for (const auto& nt : ckpt.tensors) {
      bool known = false;
      for (const auto& s : state) known = known || s.name == nt.name;
      if (!known) throw FormatError("checkpoint: unknown tensor " + nt.name);
    }
  }
  for (const auto& nt : state) {
    Tensor dst = nt.tensor;
    auto src = by_name.at(nt.name)->data();
    std::copy(src.begin(), src.end(), dst.mutable_data().begin());
  }
}

Model restore_model(const Checkpoint& ckpt) {
  Model m(ckpt.model, 0);
  load_into(m, ckpt);
  return m;
}

}  // namespace daunet
