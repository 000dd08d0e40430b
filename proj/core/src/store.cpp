#include "bemtta/store.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <functional>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

namespace bemtta {

ConfigError::ConfigError(const std::string& message, int line_no,
                         std::string field_name)
    : std::runtime_error(line_no > 0 ? "line " + std::to_string(line_no) +
                                           ": " + message
                                     : message),
      line(line_no),
      field(std::move(field_name)) {}

FormatError::FormatError(const std::string& message, std::size_t byte_offset)
    : std::runtime_error(message + " (at byte " +
                         std::to_string(byte_offset) + ")"),
      offset(byte_offset) {}

namespace {

std::string fmt17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string fmt6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::size_t pos = 0;
  for (;;) {
    const auto next = s.find(sep, pos);
    if (next == std::string::npos) {
      parts.push_back(s.substr(pos));
      return parts;
    }
    parts.push_back(s.substr(pos, next - pos));
    pos = next + 1;
  }
}

double parse_double(const std::string& value, int line,
                    const std::string& key) {
  double out = 0.0;
  const char* first = value.data();
  const char* last = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(first, last, out);
  if (ec != std::errc{} || ptr != last) {
    throw ConfigError("invalid number for '" + key + "': " + value, line,
                      key);
  }
  return out;
}

long long parse_int(const std::string& value, int line,
                    const std::string& key) {
  long long out = 0;
  const char* first = value.data();
  const char* last = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(first, last, out);
  if (ec != std::errc{} || ptr != last) {
    throw ConfigError("invalid integer for '" + key + "': " + value, line,
                      key);
  }
  return out;
}

std::uint64_t parse_u64(const std::string& value, int line,
                        const std::string& key) {
  std::uint64_t out = 0;
  const char* first = value.data();
  const char* last = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(first, last, out);
  if (ec != std::errc{} || ptr != last) {
    throw ConfigError("invalid unsigned integer for '" + key + "': " + value,
                      line, key);
  }
  return out;
}

std::vector<double> parse_weights(const std::string& value, int line,
                                  const std::string& key) {
  std::vector<double> weights;
  for (const std::string& part : split(value, ',')) {
    weights.push_back(parse_double(trim(part), line, key));
  }
  return weights;
}

std::vector<Method> parse_method_list(const std::string& value, int line,
                                      const std::string& key) {
  std::vector<Method> methods;
  for (const std::string& part : split(value, ',')) {
    const std::string name = trim(part);
    const auto m = parse_method(name);
    if (!m) {
      throw ConfigError("unknown method '" + name + "'", line, key);
    }
    methods.push_back(*m);
  }
  return methods;
}

std::string join_weights(const std::vector<double>& weights) {
  std::string out;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (i) out += ",";
    out += fmt17(weights[i]);
  }
  return out;
}

std::string join_methods(const std::vector<Method>& methods) {
  std::string out;
  for (std::size_t i = 0; i < methods.size(); ++i) {
    if (i) out += ",";
    out += std::string(method_name(methods[i]));
  }
  return out;
}

std::string join_ints(const std::vector<int>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(v[i]);
  }
  return out;
}

}  // namespace

ExperimentConfig parse_config_text(const std::string& text) {
  ExperimentConfig cfg;
  std::set<std::string> seen;
  std::istringstream stream(text);
  std::string raw;
  int line_no = 0;
  while (std::getline(stream, raw)) {
    ++line_no;
    const auto hash = raw.find('#');
    if (hash != std::string::npos) raw.erase(hash);
    const std::string line = trim(raw);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("expected 'key = value'", line_no);
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError("empty key", line_no);
    if (!seen.insert(key).second) {
      throw ConfigError("duplicate key '" + key + "'", line_no, key);
    }

    WorldConfig& w = cfg.world;
    AdaptationConfig& a = cfg.adaptation;
    if (key == "seed") {
      w.seed = parse_u64(value, line_no, key);
    } else if (key == "label_count") {
      w.label_count = static_cast<int>(parse_int(value, line_no, key));
    } else if (key == "dim") {
      w.dim = static_cast<int>(parse_int(value, line_no, key));
    } else if (key == "base_size") {
      w.base_size = static_cast<int>(parse_int(value, line_no, key));
    } else if (key == "instance_sigma") {
      w.instance_sigma = parse_double(value, line_no, key);
    } else if (key == "view_sigma") {
      w.view_sigma = parse_double(value, line_no, key);
    } else if (key == "text_sigma") {
      w.text_sigma = parse_double(value, line_no, key);
    } else if (key == "drop_prob") {
      w.drop_prob = parse_double(value, line_no, key);
    } else if (key == "instance_label_weights") {
      w.instance_label_weights = parse_weights(value, line_no, key);
    } else if (key == "caption_label_weights") {
      w.caption_label_weights = parse_weights(value, line_no, key);
    } else if (key == "context_dim") {
      w.context_dim = static_cast<int>(parse_int(value, line_no, key));
    } else if (key == "temperature") {
      w.temperature = parse_double(value, line_no, key);
    } else if (key == "proj_scale") {
      w.proj_scale = parse_double(value, line_no, key);
    } else if (key == "n_views") {
      a.n_views = static_cast<int>(parse_int(value, line_no, key));
    } else if (key == "select_ratio") {
      a.select_ratio = parse_double(value, line_no, key);
    } else if (key == "lr_view") {
      a.lr_view = parse_double(value, line_no, key);
    } else if (key == "lr_caption") {
      a.lr_caption = parse_double(value, line_no, key);
    } else if (key == "steps") {
      a.steps = static_cast<int>(parse_int(value, line_no, key));
    } else if (key == "captions_per_view") {
      a.captions_per_view = static_cast<int>(parse_int(value, line_no, key));
    } else if (key == "beta1") {
      a.adamw.beta1 = parse_double(value, line_no, key);
    } else if (key == "beta2") {
      a.adamw.beta2 = parse_double(value, line_no, key);
    } else if (key == "eps") {
      a.adamw.eps = parse_double(value, line_no, key);
    } else if (key == "weight_decay") {
      a.adamw.weight_decay = parse_double(value, line_no, key);
    } else if (key == "methods") {
      cfg.methods = parse_method_list(value, line_no, key);
    } else if (key == "dataset_size") {
      cfg.dataset_size = static_cast<int>(parse_int(value, line_no, key));
    } else if (key == "out_prefix") {
      cfg.out_prefix = value;
    } else if (key == "init_context") {
      cfg.init_context_path = value;
    } else {
      throw ConfigError("unknown key '" + key + "'", line_no, key);
    }
  }
  return cfg;
}

ExperimentConfig load_config_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw ConfigError("cannot open config file: " + path.string());
  }
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_config_text(buffer.str());
}

void validate_config(const ExperimentConfig& cfg) {
  const WorldConfig& w = cfg.world;
  const AdaptationConfig& a = cfg.adaptation;
  auto fail = [](const std::string& field, const std::string& message) {
    throw ConfigError(field + ": " + message, 0, field);
  };

  if (w.label_count < 2) fail("label_count", "must be >= 2");
  if (w.dim < 8) fail("dim", "must be >= 8");
  if (w.base_size < 1) fail("base_size", "must be >= 1");
  if (!(w.instance_sigma >= 0.0) || !std::isfinite(w.instance_sigma)) {
    fail("instance_sigma", "must be a finite value >= 0");
  }
  if (!(w.view_sigma >= 0.0) || !std::isfinite(w.view_sigma)) {
    fail("view_sigma", "must be a finite value >= 0");
  }
  if (!(w.text_sigma >= 0.0) || !std::isfinite(w.text_sigma)) {
    fail("text_sigma", "must be a finite value >= 0");
  }
  if (!(w.drop_prob >= 0.0 && w.drop_prob < 1.0)) {
    fail("drop_prob", "must lie in [0, 1)");
  }
  auto check_weights = [&](const std::vector<double>& weights,
                           const std::string& field, std::size_t cap) {
    if (weights.empty() || weights.size() > cap) {
      fail(field, "needs between 1 and " + std::to_string(cap) + " entries");
    }
    double total = 0.0;
    for (double x : weights) {
      if (!(x >= 0.0) || !std::isfinite(x)) fail(field, "negative weight");
      total += x;
    }
    if (!(total > 0.0)) fail(field, "weights sum to zero");
  };
  check_weights(w.instance_label_weights, "instance_label_weights",
                static_cast<std::size_t>(w.label_count));
  check_weights(w.caption_label_weights, "caption_label_weights",
                std::min<std::size_t>(5, static_cast<std::size_t>(w.label_count)));
  if (w.context_dim < 1) fail("context_dim", "must be >= 1");
  if (!(w.temperature >= 0.0) || !std::isfinite(w.temperature)) {
    fail("temperature", "must be a finite value >= 0");
  }
  if (!std::isfinite(w.proj_scale)) fail("proj_scale", "must be finite");

  if (a.n_views < 1) fail("n_views", "must be >= 1");
  if (!(a.select_ratio > 0.0 && a.select_ratio <= 1.0)) {
    fail("select_ratio", "must lie in (0, 1]");
  }
  if (!(a.lr_view >= 0.0) || !std::isfinite(a.lr_view)) {
    fail("lr_view", "must be a finite value >= 0");
  }
  if (!(a.lr_caption >= 0.0) || !std::isfinite(a.lr_caption)) {
    fail("lr_caption", "must be a finite value >= 0");
  }
  if (a.steps < 1) fail("steps", "must be >= 1");
  if (a.captions_per_view < 1 || a.captions_per_view > w.base_size) {
    fail("captions_per_view", "must lie in [1, base_size]");
  }
  if (!(a.adamw.beta1 >= 0.0 && a.adamw.beta1 < 1.0)) {
    fail("beta1", "must lie in [0, 1)");
  }
  if (!(a.adamw.beta2 >= 0.0 && a.adamw.beta2 < 1.0)) {
    fail("beta2", "must lie in [0, 1)");
  }
  if (!(a.adamw.eps > 0.0)) fail("eps", "must be > 0");
  if (!(a.adamw.weight_decay >= 0.0)) fail("weight_decay", "must be >= 0");

  if (cfg.dataset_size < 1) fail("dataset_size", "must be >= 1");
  if (cfg.methods.empty()) fail("methods", "at least one method required");
  if (cfg.out_prefix.empty()) fail("out_prefix", "must not be empty");
}

std::string canonical_config_text(const ExperimentConfig& cfg) {
  const WorldConfig& w = cfg.world;
  const AdaptationConfig& a = cfg.adaptation;
  std::string out;
  auto kv = [&out](const std::string& key, const std::string& value) {
    out += key;
    out += " = ";
    out += value;
    out += "\n";
  };
  kv("seed", std::to_string(w.seed));
  kv("label_count", std::to_string(w.label_count));
  kv("dim", std::to_string(w.dim));
  kv("base_size", std::to_string(w.base_size));
  kv("instance_sigma", fmt17(w.instance_sigma));
  kv("view_sigma", fmt17(w.view_sigma));
  kv("text_sigma", fmt17(w.text_sigma));
  kv("drop_prob", fmt17(w.drop_prob));
  kv("instance_label_weights", join_weights(w.instance_label_weights));
  kv("caption_label_weights", join_weights(w.caption_label_weights));
  kv("context_dim", std::to_string(w.context_dim));
  kv("temperature", fmt17(w.temperature));
  kv("proj_scale", fmt17(w.proj_scale));
  kv("n_views", std::to_string(a.n_views));
  kv("select_ratio", fmt17(a.select_ratio));
  kv("lr_view", fmt17(a.lr_view));
  kv("lr_caption", fmt17(a.lr_caption));
  kv("steps", std::to_string(a.steps));
  kv("captions_per_view", std::to_string(a.captions_per_view));
  kv("beta1", fmt17(a.adamw.beta1));
  kv("beta2", fmt17(a.adamw.beta2));
  kv("eps", fmt17(a.adamw.eps));
  kv("weight_decay", fmt17(a.adamw.weight_decay));
  kv("methods", join_methods(cfg.methods));
  kv("dataset_size", std::to_string(cfg.dataset_size));
  kv("out_prefix", cfg.out_prefix);
  kv("init_context", cfg.init_context_path);
  return out;
}

std::string config_digest(const ExperimentConfig& cfg) {
  const std::string text = canonical_config_text(cfg);
  std::uint64_t h = 1469598103934665603ull;  // FNV-1a 64
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(h));
  return buf;
}

std::string default_config_template() {
  const ExperimentConfig cfg;
  std::string out = "# bemtta experiment configuration\n";
  out += "# every key is optional; defaults reproduce the stock benchmark\n";
  out += "\n# world\n";
  std::istringstream lines(canonical_config_text(cfg));
  std::string line;
  while (std::getline(lines, line)) {
    if (line.rfind("n_views", 0) == 0) out += "\n# adaptation\n";
    if (line.rfind("methods", 0) == 0) out += "\n# run\n";
    out += line;
    out += "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Embedding file format
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'B', 'E', 'M', 'T', 'T', 'A', '1', '\0'};
constexpr std::size_t kHeaderBytes = 8 + 4 + 4 + 1;

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xff));
  out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xff));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xff));
  out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xff));
  out.push_back(static_cast<std::uint8_t>((v >> 16) & 0xff));
  out.push_back(static_cast<std::uint8_t>((v >> 24) & 0xff));
}

std::uint16_t get_u16(std::span<const std::uint8_t> b, std::size_t at) {
  return static_cast<std::uint16_t>(b[at] | (b[at + 1] << 8));
}

std::uint32_t get_u32(std::span<const std::uint8_t> b, std::size_t at) {
  return static_cast<std::uint32_t>(b[at]) |
         (static_cast<std::uint32_t>(b[at + 1]) << 8) |
         (static_cast<std::uint32_t>(b[at + 2]) << 16) |
         (static_cast<std::uint32_t>(b[at + 3]) << 24);
}

std::vector<std::uint16_t> to_u16_labels(const std::vector<int>& labels) {
  std::vector<std::uint16_t> out;
  out.reserve(labels.size());
  for (int l : labels) {
    if (l < 0 || l > 0xffff) {
      throw std::invalid_argument("label out of u16 range");
    }
    out.push_back(static_cast<std::uint16_t>(l));
  }
  return out;
}

std::vector<int> from_u16_labels(const std::vector<std::uint16_t>& labels) {
  std::vector<int> out(labels.begin(), labels.end());
  std::sort(out.begin(), out.end());
  return out;
}

EmbeddingFile make_embedding(PayloadKind kind, std::uint32_t count,
                             std::uint32_t dim) {
  EmbeddingFile f;
  f.kind = kind;
  f.count = count;
  f.dim = dim;
  f.data.reserve(static_cast<std::size_t>(count) * dim);
  return f;
}

void append_row(EmbeddingFile& f, const Vec& row) {
  for (double x : row) f.data.push_back(static_cast<float>(x));
}

}  // namespace

bool kind_has_labels(PayloadKind kind) {
  return kind == PayloadKind::captions || kind == PayloadKind::instances;
}

const char* kind_name(PayloadKind kind) {
  switch (kind) {
    case PayloadKind::anchors: return "anchors";
    case PayloadKind::captions: return "captions";
    case PayloadKind::instances: return "instances";
    case PayloadKind::context: return "context";
  }
  return "unknown";
}

std::vector<std::uint8_t> serialize_embedding_file(const EmbeddingFile& f) {
  if (f.data.size() != static_cast<std::size_t>(f.count) * f.dim) {
    throw std::invalid_argument("serialize_embedding_file: payload size");
  }
  if (kind_has_labels(f.kind) && f.label_sets.size() != f.count) {
    throw std::invalid_argument("serialize_embedding_file: label sets");
  }
  std::vector<std::uint8_t> out;
  out.insert(out.end(), kMagic, kMagic + 8);
  put_u32(out, f.count);
  put_u32(out, f.dim);
  out.push_back(static_cast<std::uint8_t>(f.kind));
  for (float x : f.data) {
    put_u32(out, std::bit_cast<std::uint32_t>(x));
  }
  if (kind_has_labels(f.kind)) {
    for (const auto& labels : f.label_sets) {
      put_u16(out, static_cast<std::uint16_t>(labels.size()));
      for (std::uint16_t l : labels) put_u16(out, l);
    }
  }
  return out;
}

EmbeddingFile parse_embedding_bytes(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kHeaderBytes) {
    throw FormatError("truncated header: expected at least " +
                          std::to_string(kHeaderBytes) + " bytes, got " +
                          std::to_string(bytes.size()),
                      bytes.size());
  }
  if (std::memcmp(bytes.data(), kMagic, 8) != 0) {
    throw FormatError("bad magic (want \"BEMTTA1\\0\")", 0);
  }
  EmbeddingFile f;
  f.count = get_u32(bytes, 8);
  f.dim = get_u32(bytes, 12);
  const std::uint8_t kind_byte = bytes[16];
  if (kind_byte > 3) {
    throw FormatError(
        "unknown payload kind " + std::to_string(int(kind_byte)), 16);
  }
  f.kind = static_cast<PayloadKind>(kind_byte);

  std::size_t at = kHeaderBytes;
  const std::size_t payload_bytes =
      static_cast<std::size_t>(f.count) * f.dim * 4;
  if (bytes.size() - at < payload_bytes) {
    throw FormatError("truncated payload: expected " +
                          std::to_string(payload_bytes) + " bytes, got " +
                          std::to_string(bytes.size() - at),
                      at);
  }
  f.data.reserve(static_cast<std::size_t>(f.count) * f.dim);
  for (std::size_t i = 0; i < static_cast<std::size_t>(f.count) * f.dim;
       ++i) {
    f.data.push_back(std::bit_cast<float>(get_u32(bytes, at)));
    at += 4;
  }
  if (kind_has_labels(f.kind)) {
    f.label_sets.resize(f.count);
    for (std::uint32_t r = 0; r < f.count; ++r) {
      if (bytes.size() - at < 2) {
        throw FormatError("truncated label block: expected 2 bytes, got " +
                              std::to_string(bytes.size() - at),
                          at);
      }
      const std::uint16_t n = get_u16(bytes, at);
      at += 2;
      const std::size_t need = static_cast<std::size_t>(n) * 2;
      if (bytes.size() - at < need) {
        throw FormatError("truncated label block: expected " +
                              std::to_string(need) + " bytes, got " +
                              std::to_string(bytes.size() - at),
                          at);
      }
      auto& set = f.label_sets[r];
      set.reserve(n);
      for (std::uint16_t i = 0; i < n; ++i) {
        set.push_back(get_u16(bytes, at));
        at += 2;
      }
    }
  }
  if (at != bytes.size()) {
    throw FormatError("trailing bytes: expected total " + std::to_string(at) +
                          " bytes, got " + std::to_string(bytes.size()),
                      at);
  }
  return f;
}

EmbeddingFile read_embedding_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw FormatError("cannot open embedding file: " + path.string(), 0);
  }
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return parse_embedding_bytes(bytes);
}

void write_embedding_file(const std::filesystem::path& path,
                          const EmbeddingFile& file) {
  const std::vector<std::uint8_t> bytes = serialize_embedding_file(file);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw std::runtime_error("cannot write embedding file: " + path.string());
  }
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
}

EmbeddingFile embedding_from_anchors(const LabelSpace& space) {
  EmbeddingFile f = make_embedding(
      PayloadKind::anchors, static_cast<std::uint32_t>(space.label_count),
      static_cast<std::uint32_t>(space.dim));
  for (const Vec& anchor : space.anchors) append_row(f, anchor);
  return f;
}

EmbeddingFile embedding_from_captions(const CaptionBase& base) {
  EmbeddingFile f = make_embedding(PayloadKind::captions,
                                   static_cast<std::uint32_t>(base.size()),
                                   static_cast<std::uint32_t>(base.dim));
  for (const Caption& cap : base.captions) {
    append_row(f, cap.embedding);
    f.label_sets.push_back(to_u16_labels(cap.label_set));
  }
  return f;
}

EmbeddingFile embedding_from_instances(
    const std::vector<Instance>& instances) {
  const std::uint32_t dim =
      instances.empty() ? 0
                        : static_cast<std::uint32_t>(
                              instances.front().embedding.size());
  EmbeddingFile f = make_embedding(
      PayloadKind::instances, static_cast<std::uint32_t>(instances.size()),
      dim);
  for (const Instance& inst : instances) {
    append_row(f, inst.embedding);
    f.label_sets.push_back(to_u16_labels(inst.labels));
  }
  return f;
}

EmbeddingFile embedding_from_contexts(const PromptInit& init) {
  EmbeddingFile f = make_embedding(
      PayloadKind::context, 2,
      static_cast<std::uint32_t>(init.view.values.size()));
  append_row(f, init.view.values);
  append_row(f, init.caption.values);
  return f;
}

namespace {

Vec row_as_vec(const EmbeddingFile& f, std::uint32_t row) {
  Vec out(f.dim);
  const std::size_t at = static_cast<std::size_t>(row) * f.dim;
  for (std::uint32_t i = 0; i < f.dim; ++i) {
    out[i] = static_cast<double>(f.data[at + i]);
  }
  return out;
}

void require_kind(const EmbeddingFile& f, PayloadKind want) {
  if (f.kind != want) {
    throw FormatError(std::string("payload kind mismatch: want ") +
                          kind_name(want) + ", got " + kind_name(f.kind),
                      16);
  }
}

}  // namespace

LabelSpace label_space_from_embedding(const EmbeddingFile& f) {
  require_kind(f, PayloadKind::anchors);
  LabelSpace space;
  space.label_count = static_cast<int>(f.count);
  space.dim = static_cast<int>(f.dim);
  space.seed = 0;
  for (std::uint32_t r = 0; r < f.count; ++r) {
    space.anchors.push_back(row_as_vec(f, r));
  }
  return space;
}

CaptionBase caption_base_from_embedding(const EmbeddingFile& f) {
  require_kind(f, PayloadKind::captions);
  CaptionBase base;
  base.dim = static_cast<int>(f.dim);
  for (std::uint32_t r = 0; r < f.count; ++r) {
    Caption cap;
    cap.embedding = row_as_vec(f, r);
    cap.label_set = from_u16_labels(f.label_sets[r]);
    if (cap.label_set.empty() || cap.label_set.size() > 5) {
      throw FormatError(
          "caption " + std::to_string(r) + " needs 1..5 labels", 0);
    }
    base.matrix.insert(base.matrix.end(), cap.embedding.begin(),
                       cap.embedding.end());
    base.captions.push_back(std::move(cap));
  }
  return base;
}

std::vector<Instance> instances_from_embedding(const EmbeddingFile& f) {
  require_kind(f, PayloadKind::instances);
  std::vector<Instance> out;
  for (std::uint32_t r = 0; r < f.count; ++r) {
    Instance inst;
    inst.embedding = row_as_vec(f, r);
    inst.labels = from_u16_labels(f.label_sets[r]);
    if (inst.labels.empty()) {
      throw FormatError("instance " + std::to_string(r) + " has no labels",
                        0);
    }
    out.push_back(std::move(inst));
  }
  return out;
}

PromptInit contexts_from_embedding(const EmbeddingFile& f) {
  require_kind(f, PayloadKind::context);
  if (f.count != 1 && f.count != 2) {
    throw FormatError("context payload needs 1 or 2 records, got " +
                          std::to_string(f.count),
                      8);
  }
  PromptInit init;
  init.view.values = row_as_vec(f, 0);
  init.view.role = PromptRole::view;
  init.caption.values = row_as_vec(f, f.count == 2 ? 1 : 0);
  init.caption.role = PromptRole::caption;
  return init;
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

namespace {

std::string json_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '"': out += "\\\""; break;
      case '\\': out += "\\\\"; break;
      case '\n': out += "\\n"; break;
      case '\t': out += "\\t"; break;
      default: out += c;
    }
  }
  return out;
}

std::string json_number(double v) {
  return std::isfinite(v) ? fmt6(v) : std::string("null");
}

}  // namespace

std::string report_json(const ExperimentConfig& cfg,
                        const std::vector<EvalReport>& reports) {
  std::string out;
  out += "{\n";
  out += "  \"format\": \"bemtta-report-v1\",\n";
  out += "  \"config_digest\": \"" + config_digest(cfg) + "\",\n";
  out += "  \"config\": {\n";
  {
    std::istringstream lines(canonical_config_text(cfg));
    std::string line;
    std::vector<std::string> rendered;
    while (std::getline(lines, line)) {
      const auto eq = line.find(" = ");
      rendered.push_back("    \"" + json_escape(line.substr(0, eq)) +
                         "\": \"" + json_escape(line.substr(eq + 3)) + "\"");
    }
    for (std::size_t i = 0; i < rendered.size(); ++i) {
      out += rendered[i];
      out += i + 1 < rendered.size() ? ",\n" : "\n";
    }
  }
  out += "  },\n";
  out += "  \"methods\": [\n";
  for (std::size_t m = 0; m < reports.size(); ++m) {
    const EvalReport& r = reports[m];
    out += "    {\n";
    out += "      \"method\": \"" + json_escape(r.method) + "\",\n";
    out += "      \"map\": " + json_number(r.map) + ",\n";
    out += "      \"bucket_map\": {";
    for (std::size_t b = 0; b < kBucketNames.size(); ++b) {
      out += std::string(b ? ", " : "") + "\"" + kBucketNames[b] +
             "\": " + json_number(r.bucket_map[b]);
    }
    out += "},\n";
    out += "      \"bucket_sizes\": {";
    for (std::size_t b = 0; b < kBucketNames.size(); ++b) {
      out += std::string(b ? ", " : "") + "\"" + kBucketNames[b] +
             "\": " + std::to_string(r.bucket_sizes[b]);
    }
    out += "},\n";
    out += "      \"excluded_classes\": [";
    for (std::size_t i = 0; i < r.excluded_classes.size(); ++i) {
      out += std::string(i ? ", " : "") + std::to_string(r.excluded_classes[i]);
    }
    out += "],\n";
    out += "      \"per_class_ap\": [";
    for (std::size_t i = 0; i < r.per_class_ap.size(); ++i) {
      out += std::string(i ? ", " : "") + json_number(r.per_class_ap[i]);
    }
    out += "]\n";
    out += m + 1 < reports.size() ? "    },\n" : "    }\n";
  }
  out += "  ]\n";
  out += "}\n";
  return out;
}

std::string report_csv(const std::vector<EvalReport>& reports) {
  std::string out = "method,map,map_1_2,map_3_4,map_5_7,map_8p,runtime_s\n";
  for (const EvalReport& r : reports) {
    out += r.method;
    auto cell = [&out](double v) {
      out += ",";
      out += std::isfinite(v) ? fmt6(v) : std::string("nan");
    };
    cell(r.map);
    for (double b : r.bucket_map) cell(b);
    cell(r.runtime_seconds);
    out += "\n";
  }
  return out;
}

std::string trace_text(const ExperimentConfig& cfg, Method method,
                       int instance_index, const Instance& instance,
                       const AdaptationOutcome& before,
                       const AdaptationOutcome& after) {
  std::string out;
  out += "# bemtta trace v1\n";
  out += "# config_digest: " + config_digest(cfg) + "\n";
  out += "# method: " + std::string(method_name(method)) + "\n";
  out += "# instance: " + std::to_string(instance_index) + "\n";
  out += "# labels: " + join_ints(instance.labels) + "\n";
  out += "# loss_value: " + fmt6(after.loss_value) + "\n";
  out += "# loss_after_step: " + fmt6(after.loss_after_step) + "\n";
  out += "# selected_views: " + join_ints(after.selected_view_indices) + "\n";
  out += "# selected_captions: " +
         join_ints(after.selected_caption_indices) + "\n";
  for (std::size_t i = 0; i < after.per_view_entropy.size(); ++i) {
    out += "# view " + std::to_string(i) +
           ": entropy=" + fmt6(after.per_view_entropy[i]) +
           " weak=" + join_ints(after.weak_sets[i]) + "\n";
  }
  for (std::size_t i = 0; i < after.per_caption_entropy.size(); ++i) {
    out += "# caption " + std::to_string(i) +
           ": entropy=" + fmt6(after.per_caption_entropy[i]) +
           " strong=" + join_ints(after.strong_sets[i]) + "\n";
  }
  out += "class,positive,logit_before,logit_after\n";
  for (std::size_t cls = 0; cls < after.scores.values.size(); ++cls) {
    const bool positive =
        std::binary_search(instance.labels.begin(), instance.labels.end(),
                           static_cast<int>(cls));
    out += std::to_string(cls) + "," + (positive ? "1" : "0") + "," +
           fmt6(before.scores.values[cls]) + "," +
           fmt6(after.scores.values[cls]) + "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Command entry points
// ---------------------------------------------------------------------------

namespace {

void write_text_file(const std::filesystem::path& path,
                     const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw std::runtime_error("cannot write file: " + path.string());
  }
  out << text;
}

PromptInit load_prompt_init(const ExperimentConfig& cfg) {
  if (cfg.init_context_path.empty()) {
    return zero_prompt_init(cfg.world.context_dim);
  }
  const EmbeddingFile f = read_embedding_file(cfg.init_context_path);
  PromptInit init = contexts_from_embedding(f);
  if (static_cast<int>(init.view.values.size()) != cfg.world.context_dim) {
    throw ConfigError("init_context: context length " +
                          std::to_string(init.view.values.size()) +
                          " does not match context_dim " +
                          std::to_string(cfg.world.context_dim),
                      0, "init_context");
  }
  return init;
}

}  // namespace

int cmd_run(const ExperimentConfig& cfg, const std::filesystem::path& out_dir,
            int jobs, std::ostream& log) {
  try {
    validate_config(cfg);
    const World world = build_world(cfg.world);
    const PromptInit init = load_prompt_init(cfg);
    std::vector<AdaptationConfig> runs;
    for (Method m : cfg.methods) {
      AdaptationConfig a = cfg.adaptation;
      a.method = m;
      runs.push_back(a);
    }
    std::vector<EvalReport> reports =
        run_benchmark(world, runs, cfg.dataset_size, jobs, &init);
    const std::string digest = config_digest(cfg);
    for (EvalReport& r : reports) r.config_digest = digest;

    std::filesystem::create_directories(out_dir);
    const auto json_path = out_dir / (cfg.out_prefix + ".json");
    const auto csv_path = out_dir / (cfg.out_prefix + ".csv");
    write_text_file(json_path, report_json(cfg, reports));
    write_text_file(csv_path, report_csv(reports));

    for (const EvalReport& r : reports) {
      log << r.method << ": map=" << fmt6(r.map)
          << " runtime=" << fmt6(r.runtime_seconds) << "s\n";
    }
    log << "wrote " << json_path.string() << " and " << csv_path.string()
        << "\n";
    return 0;
  } catch (const ConfigError& e) {
    log << "config error: " << e.what() << "\n";
    return 2;
  } catch (const FormatError& e) {
    log << "format error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    log << "error: " << e.what() << "\n";
    return 1;
  }
}

int cmd_trace(const ExperimentConfig& cfg, int instance_index, Method method,
              const std::filesystem::path& out_dir, std::ostream& log) {
  try {
    validate_config(cfg);
    if (instance_index < 0 || instance_index >= cfg.dataset_size) {
      throw ConfigError("instance index " + std::to_string(instance_index) +
                            " out of range [0, " +
                            std::to_string(cfg.dataset_size) + ")",
                        0, "instance");
    }
    const World world = build_world(cfg.world);
    const PromptInit init = load_prompt_init(cfg);
    const std::vector<Instance> dataset =
        gen_dataset(world, cfg.dataset_size);
    const Instance& instance =
        dataset[static_cast<std::size_t>(instance_index)];
    const std::uint64_t seed =
        episode_stream_seed(cfg.world.seed, instance_index);

    Adapter adapter(world.space, world.config, world.base, world.encoder,
                    init);
    AdaptationConfig acfg = cfg.adaptation;
    acfg.method = Method::no_adapt;
    const AdaptationOutcome before =
        adapter.adapt_instance(instance, acfg, seed);
    acfg.method = method;
    const AdaptationOutcome after =
        adapter.adapt_instance(instance, acfg, seed);

    std::filesystem::create_directories(out_dir);
    const auto path =
        out_dir / ("trace_" + std::to_string(instance_index) + ".csv");
    write_text_file(path, trace_text(cfg, method, instance_index, instance,
                                     before, after));
    log << "wrote " << path.string() << "\n";
    return 0;
  } catch (const ConfigError& e) {
    log << "config error: " << e.what() << "\n";
    return 2;
  } catch (const FormatError& e) {
    log << "format error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    log << "error: " << e.what() << "\n";
    return 1;
  }
}

int cmd_export(const ExperimentConfig& cfg, const std::string& what,
               const std::filesystem::path& file, std::ostream& log) {
  try {
    validate_config(cfg);
    const World world = build_world(cfg.world);
    EmbeddingFile payload;
    if (what == "anchors") {
      payload = embedding_from_anchors(world.space);
    } else if (what == "captions") {
      payload = embedding_from_captions(world.base);
    } else if (what == "instances") {
      payload = embedding_from_instances(gen_dataset(world, cfg.dataset_size));
    } else if (what == "context") {
      payload = embedding_from_contexts(load_prompt_init(cfg));
    } else {
      throw ConfigError("unknown export payload '" + what +
                            "' (want anchors|captions|instances|context)",
                        0, "what");
    }
    write_embedding_file(file, payload);
    log << "wrote " << file.string() << " (" << kind_name(payload.kind)
        << ", count=" << payload.count << ", dim=" << payload.dim << ")\n";
    return 0;
  } catch (const ConfigError& e) {
    log << "config error: " << e.what() << "\n";
    return 2;
  } catch (const FormatError& e) {
    log << "format error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    log << "error: " << e.what() << "\n";
    return 1;
  }
}

int cmd_import(const std::filesystem::path& file,
               const std::optional<std::filesystem::path>& reexport,
               std::ostream& log) {
  try {
    const EmbeddingFile f = read_embedding_file(file);
    log << "kind: " << kind_name(f.kind) << "\n";
    log << "count: " << f.count << "\n";
    log << "dim: " << f.dim << "\n";
    if (kind_has_labels(f.kind) && !f.label_sets.empty()) {
      std::size_t min_size = f.label_sets.front().size();
      std::size_t max_size = min_size;
      std::size_t total = 0;
      for (const auto& set : f.label_sets) {
        min_size = std::min(min_size, set.size());
        max_size = std::max(max_size, set.size());
        total += set.size();
      }
      log << "label sets: min=" << min_size << " max=" << max_size
          << " mean=" << fmt6(static_cast<double>(total) /
                              static_cast<double>(f.label_sets.size()))
          << "\n";
    }
    if (reexport) {
      write_embedding_file(*reexport, f);
      log << "wrote " << reexport->string() << "\n";
    }
    return 0;
  } catch (const FormatError& e) {
    log << "format error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    log << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace bemtta
