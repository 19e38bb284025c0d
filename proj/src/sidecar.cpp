#include "distill/sidecar.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "distill/error.hpp"

namespace distill {

static_assert(std::endian::native == std::endian::little, "sidecar I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'D', 'S', 'T', 'L', 'S', 'I', 'D', 'E'};

class Writer {
 public:
  template <typename T>
  void put(T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out_.append(buf, sizeof(T));
  }
  void put_string(const std::string& s) {
    put(static_cast<std::uint32_t>(s.size()));
    out_ += s;
  }
  void put_raw(const void* p, std::size_t n) { out_.append(static_cast<const char*>(p), n); }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(const std::string& in) : in_(in) {}

  template <typename T>
  T get(const char* what) {
    T v;
    need(sizeof(T), what);
    std::memcpy(&v, in_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string get_string(const char* what) {
    const auto n = get<std::uint32_t>(what);
    need(n, what);
    std::string s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  void get_raw(void* p, std::size_t n, const char* what) {
    need(n, what);
    std::memcpy(p, in_.data() + pos_, n);
    pos_ += n;
  }
  bool at_end() const { return pos_ == in_.size(); }

 private:
  void need(std::size_t n, const char* what) const {
    if (in_.size() - pos_ < n) throw ParseError(std::string("sidecar truncated while reading ") + what);
  }

  const std::string& in_;
  std::size_t pos_ = 0;
};

std::size_t parse_count(const std::string& text, const std::string& key) {
  try {
    std::size_t used = 0;
    const unsigned long long v = std::stoull(text, &used);
    if (used != text.size()) throw std::invalid_argument(key);
    return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
    throw ParseError("sidecar attribute " + key + ": expected a non-negative integer, got '" + text + "'");
  }
}

std::string layer_key(std::size_t l, const char* field) { return "layer" + std::to_string(l) + "." + field; }

std::string head_key(std::size_t l, const char* field, std::size_t h) {
  return layer_key(l, field) + "." + std::to_string(h);
}

}  // namespace

const Tensor& Sidecar::tensor(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return t;
  }
  throw ParseError("sidecar has no tensor '" + name + "'");
}

const std::string& Sidecar::attribute(const std::string& key) const {
  const auto it = attributes.find(key);
  if (it == attributes.end()) throw ParseError("sidecar has no attribute '" + key + "'");
  return it->second;
}

std::string encode_sidecar(const Sidecar& sidecar) {
  Writer w;
  w.put_raw(kMagic, sizeof(kMagic));
  w.put(kSidecarVersion);
  w.put(static_cast<std::uint32_t>(sidecar.attributes.size()));
  for (const auto& [k, v] : sidecar.attributes) {
    w.put_string(k);
    w.put_string(v);
  }
  w.put(static_cast<std::uint32_t>(sidecar.tensors.size()));
  for (const auto& [name, t] : sidecar.tensors) {
    w.put_string(name);
    w.put(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) w.put(static_cast<std::uint64_t>(d));
    w.put_raw(t.data(), t.size() * sizeof(double));
  }
  return w.take();
}

Sidecar decode_sidecar(const std::string& bytes) {
  Reader r(bytes);
  char magic[sizeof(kMagic)];
  r.get_raw(magic, sizeof(magic), "magic");
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw ParseError("not a sidecar file (bad magic)");
  const auto version = r.get<std::uint32_t>("version");
  if (version != kSidecarVersion) {
    throw ParseError("unsupported sidecar version " + std::to_string(version));
  }
  Sidecar out;
  const auto n_attrs = r.get<std::uint32_t>("attribute count");
  for (std::uint32_t i = 0; i < n_attrs; ++i) {
    std::string k = r.get_string("attribute key");
    out.attributes[k] = r.get_string("attribute value");
  }
  const auto n_tensors = r.get<std::uint32_t>("tensor count");
  for (std::uint32_t i = 0; i < n_tensors; ++i) {
    std::string name = r.get_string("tensor name");
    const auto rank = r.get<std::uint32_t>("tensor rank");
    if (rank < 1 || rank > 2) throw ParseError("tensor " + name + ": rank must be 1 or 2");
    std::vector<std::size_t> shape(rank);
    std::size_t count = 1;
    for (auto& d : shape) {
      d = static_cast<std::size_t>(r.get<std::uint64_t>("tensor dims"));
      if (d == 0) throw ParseError("tensor " + name + ": zero dimension");
      if (count > (std::size_t{1} << 40) / d) throw ParseError("tensor " + name + ": implausible size");
      count *= d;
    }
    std::vector<double> values(count);
    r.get_raw(values.data(), count * sizeof(double), "tensor values");
    out.tensors.emplace_back(std::move(name), Tensor(std::move(shape), std::move(values)));
  }
  if (!r.at_end()) throw ParseError("sidecar has trailing bytes");
  return out;
}

void write_sidecar(const Sidecar& sidecar, const std::filesystem::path& path) {
  const std::string bytes = encode_sidecar(sidecar);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

Sidecar read_sidecar(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_sidecar(bytes);
}

// ---- teacher artifacts ---------------------------------------------------

Sidecar to_sidecar(const TeacherArtifacts& artifacts) {
  Sidecar s;
  s.attributes["type"] = "teacher-artifacts";
  s.attributes["kind"] = to_string(artifacts.kind);
  s.attributes["depth"] = std::to_string(artifacts.depth());
  for (std::size_t k = 0; k < artifacts.depth(); ++k) {
    s.tensors.emplace_back("layer" + std::to_string(k), artifacts.layer_embeddings[k]);
  }
  s.tensors.emplace_back("logits", artifacts.logits);
  return s;
}

TeacherArtifacts teacher_artifacts_from(const Sidecar& s) {
  if (s.attribute("type") != "teacher-artifacts") throw ParseError("sidecar does not hold teacher artifacts");
  TeacherArtifacts a;
  try {
    a.kind = parse_teacher_kind(s.attribute("kind"));
  } catch (const ConfigError& e) {
    throw ParseError(std::string("sidecar attribute kind: ") + e.what());
  }
  const std::size_t depth = parse_count(s.attribute("depth"), "depth");
  for (std::size_t k = 0; k < depth; ++k) a.layer_embeddings.push_back(s.tensor("layer" + std::to_string(k)));
  a.logits = s.tensor("logits");
  return a;
}

// ---- student parameters --------------------------------------------------

Sidecar to_sidecar(const StudentParams& p) {
  Sidecar s;
  s.attributes["type"] = "student-params";
  s.attributes["layers"] = std::to_string(p.layers.size());
  s.attributes["heads"] = std::to_string(p.heads);
  auto add = [&](std::string name, const Tensor& t) { s.tensors.emplace_back(std::move(name), t); };
  add("input_proj", p.input_proj);
  add("input_bias", p.input_bias);
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    const EncoderLayerParams& e = p.layers[l];
    add(layer_key(l, "norm1_gain"), e.norm1_gain);
    add(layer_key(l, "norm1_offset"), e.norm1_offset);
    for (std::size_t h = 0; h < e.w_query.size(); ++h) add(head_key(l, "w_query", h), e.w_query[h]);
    for (std::size_t h = 0; h < e.w_key.size(); ++h) add(head_key(l, "w_key", h), e.w_key[h]);
    for (std::size_t h = 0; h < e.w_value.size(); ++h) add(head_key(l, "w_value", h), e.w_value[h]);
    add(layer_key(l, "w_output"), e.w_output);
    add(layer_key(l, "norm2_gain"), e.norm2_gain);
    add(layer_key(l, "norm2_offset"), e.norm2_offset);
    add(layer_key(l, "ff1"), e.ff1);
    add(layer_key(l, "ff1_bias"), e.ff1_bias);
    add(layer_key(l, "ff2"), e.ff2);
    add(layer_key(l, "ff2_bias"), e.ff2_bias);
  }
  add("classifier", p.classifier);
  add("classifier_bias", p.classifier_bias);
  return s;
}

StudentParams student_params_from(const Sidecar& s) {
  if (s.attribute("type") != "student-params") throw ParseError("sidecar does not hold student parameters");
  StudentParams p;
  p.heads = parse_count(s.attribute("heads"), "heads");
  if (p.heads == 0) throw ParseError("sidecar attribute heads: must be positive");
  const std::size_t layers = parse_count(s.attribute("layers"), "layers");
  p.input_proj = s.tensor("input_proj");
  p.input_bias = s.tensor("input_bias");
  for (std::size_t l = 0; l < layers; ++l) {
    EncoderLayerParams e;
    e.norm1_gain = s.tensor(layer_key(l, "norm1_gain"));
    e.norm1_offset = s.tensor(layer_key(l, "norm1_offset"));
    for (std::size_t h = 0; h < p.heads; ++h) e.w_query.push_back(s.tensor(head_key(l, "w_query", h)));
    for (std::size_t h = 0; h < p.heads; ++h) e.w_key.push_back(s.tensor(head_key(l, "w_key", h)));
    for (std::size_t h = 0; h < p.heads; ++h) e.w_value.push_back(s.tensor(head_key(l, "w_value", h)));
    e.w_output = s.tensor(layer_key(l, "w_output"));
    e.norm2_gain = s.tensor(layer_key(l, "norm2_gain"));
    e.norm2_offset = s.tensor(layer_key(l, "norm2_offset"));
    e.ff1 = s.tensor(layer_key(l, "ff1"));
    e.ff1_bias = s.tensor(layer_key(l, "ff1_bias"));
    e.ff2 = s.tensor(layer_key(l, "ff2"));
    e.ff2_bias = s.tensor(layer_key(l, "ff2_bias"));
    p.layers.push_back(std::move(e));
  }
  p.classifier = s.tensor("classifier");
  p.classifier_bias = s.tensor("classifier_bias");
  return p;
}

void save_artifacts(const TeacherArtifacts& artifacts, const std::filesystem::path& path) {
  write_sidecar(to_sidecar(artifacts), path);
}

TeacherArtifacts load_artifacts(const std::filesystem::path& path) {
  return teacher_artifacts_from(read_sidecar(path));
}

void save_student(const StudentParams& params, const std::filesystem::path& path) {
  write_sidecar(to_sidecar(params), path);
}

StudentParams load_student(const std::filesystem::path& path) { return student_params_from(read_sidecar(path)); }

}  // namespace distill
