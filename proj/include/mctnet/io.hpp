#pragma once

#include <openssl/evp.h>

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <istream>
#include <memory>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "mctnet/autoencoder.hpp"
#include "mctnet/error.hpp"
#include "mctnet/landscape.hpp"
#include "mctnet/quantum.hpp"

namespace mctnet {

using json = nlohmann::json;

inline constexpr std::uint32_t kFormatVersion = 1;
inline constexpr std::string_view kDatasetMagic = "MCTL";
inline constexpr std::string_view kNetworkMagic = "MCTN";

namespace detail {

// Little-endian primitive writer.
class ByteWriter {
 public:
  explicit ByteWriter(std::ostream& os) : os_(os) {}

  void raw(const void* p, std::size_t n) { os_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }
  void u32(std::uint32_t v) { le(v); }
  void u64(std::uint64_t v) { le(v); }
  void f64(double v) { le(std::bit_cast<std::uint64_t>(v)); }

  void f64s(const double* p, std::size_t n) {
    if constexpr (std::endian::native == std::endian::little) {
      raw(p, n * sizeof(double));
    } else {
      for (std::size_t i = 0; i < n; ++i) f64(p[i]);
    }
  }

 private:
  template <typename U>
  void le(U v) {
    std::array<unsigned char, sizeof(U)> b{};
    for (std::size_t i = 0; i < sizeof(U); ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    raw(b.data(), b.size());
  }
  std::ostream& os_;
};

// Little-endian reader that reports the byte offset of any short read.
class ByteReader {
 public:
  ByteReader(std::istream& is, std::string source) : is_(is), source_(std::move(source)) {}

  std::uint64_t offset() const noexcept { return offset_; }

  void raw(void* p, std::size_t n, std::string_view what) {
    is_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is_.gcount()) != n)
      throw FormatError(source_ + ": truncated " + std::string(what) + " at offset " +
                        std::to_string(offset_ + static_cast<std::uint64_t>(is_.gcount())));
    offset_ += n;
  }
  std::uint32_t u32(std::string_view what) { return le<std::uint32_t>(what); }
  std::uint64_t u64(std::string_view what) { return le<std::uint64_t>(what); }

  void f64s(double* p, std::size_t n, std::string_view what) {
    raw(p, n * sizeof(double), what);
    if constexpr (std::endian::native != std::endian::little) {
      for (std::size_t i = 0; i < n; ++i) {
        auto* b = reinterpret_cast<unsigned char*>(p + i);
        std::reverse(b, b + sizeof(double));
      }
    }
  }

  void expect_end() {
    if (is_.peek() != std::char_traits<char>::eof())
      throw FormatError(source_ + ": trailing bytes at offset " + std::to_string(offset_));
  }

  [[noreturn]] void fail(const std::string& msg, std::uint64_t at) const {
    throw FormatError(source_ + ": " + msg + " at offset " + std::to_string(at));
  }

 private:
  template <typename U>
  U le(std::string_view what) {
    std::array<unsigned char, sizeof(U)> b{};
    raw(b.data(), b.size(), what);
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(b[i]) << (8 * i);
    return v;
  }
  std::istream& is_;
  std::string source_;
  std::uint64_t offset_ = 0;
};

inline void write_header(ByteWriter& w, std::string_view magic, const json& meta) {
  const std::string doc = meta.dump();
  w.raw(magic.data(), magic.size());
  w.u32(kFormatVersion);
  w.u64(doc.size());
  w.raw(doc.data(), doc.size());
}

inline json read_header(ByteReader& r, std::string_view magic) {
  std::array<char, 4> m{};
  r.raw(m.data(), m.size(), "magic");
  if (std::string_view(m.data(), m.size()) != magic) r.fail("bad magic, expected " + std::string(magic), 0);
  const std::uint32_t version = r.u32("version");
  if (version != kFormatVersion) r.fail("unsupported version " + std::to_string(version), 4);
  const std::uint64_t len = r.u64("metadata length");
  if (len > (std::uint64_t{1} << 32)) r.fail("metadata length " + std::to_string(len) + " is implausible", 8);
  std::string doc(static_cast<std::size_t>(len), '\0');
  const std::uint64_t at = r.offset();
  r.raw(doc.data(), doc.size(), "metadata");
  try {
    return json::parse(doc);
  } catch (const json::exception& e) {
    r.fail(std::string("metadata is not valid JSON (") + e.what() + ")", at);
  }
}

inline std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw FormatError("cannot open " + path.string() + " for writing");
  return os;
}

inline std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path.string());
  return is;
}

}  // namespace detail

inline json mesh_to_json(const MeshSpec& mesh) {
  json axes = json::array();
  for (const auto& a : mesh.axes) axes.push_back({{"min", a.min}, {"max", a.max}, {"count", a.count}});
  return axes;
}

inline MeshSpec mesh_from_json(const json& j) {
  MeshSpec mesh;
  for (const auto& a : j) mesh.axes.push_back({a.at("min").get<double>(), a.at("max").get<double>(), a.at("count").get<std::size_t>()});
  return mesh;
}

inline json problem_to_json(const ControlProblem& p) {
  return {{"model_id", std::string(to_string(p.model_id))},
          {"delta", p.delta},
          {"delta_a", p.delta_a},
          {"delta_b", p.delta_b},
          {"initial_index", p.initial_index()},
          {"target_index", p.target_index()}};
}

inline ControlProblem problem_from_json(const json& j) {
  StateOverride states{j.at("initial_index").get<std::size_t>(), j.at("target_index").get<std::size_t>()};
  return build_problem(model_from_string(j.at("model_id").get<std::string>()), j.at("delta").get<double>(),
                       j.at("delta_a").get<double>(), j.at("delta_b").get<double>(), states);
}

// MCTL: magic, u32 version, u64 metadata length, JSON metadata, then one
// float64 pixel array per landscape in time order.
inline void save_dataset(const LandscapeDataset& ds, std::ostream& os) {
  json meta = problem_to_json(ds.problem);
  meta["n_ts"] = ds.mesh.segments();
  meta["mesh"] = mesh_to_json(ds.mesh);
  meta["times"] = ds.times;
  meta["seed"] = ds.seed;
  meta["flattening"] = "last-fastest";
  meta["pixels_per_landscape"] = ds.pixel_count();
  meta["landscape_count"] = ds.size();
  detail::ByteWriter w(os);
  detail::write_header(w, kDatasetMagic, meta);
  for (const auto& l : ds.landscapes) {
    if (l.pixels.size() != ds.pixel_count()) throw ShapeError("save_dataset: landscape pixel count differs from mesh");
    w.f64s(l.pixels.data(), l.pixels.size());
  }
  if (!os) throw FormatError("save_dataset: write failed");
}

inline void save_dataset(const LandscapeDataset& ds, const std::filesystem::path& path) {
  auto os = detail::open_out(path);
  save_dataset(ds, os);
}

inline LandscapeDataset load_dataset(std::istream& is, const std::string& source = "dataset") {
  detail::ByteReader r(is, source);
  const json meta = detail::read_header(r, kDatasetMagic);
  const std::uint64_t body = r.offset();
  LandscapeDataset ds;
  try {
    if (meta.at("flattening").get<std::string>() != "last-fastest") r.fail("unknown flattening order", body);
    ds.problem = problem_from_json(meta);
    ds.mesh = mesh_from_json(meta.at("mesh"));
    ds.times = meta.at("times").get<std::vector<double>>();
    ds.seed = meta.at("seed").get<std::uint64_t>();
    if (meta.at("n_ts").get<std::size_t>() != ds.mesh.segments()) r.fail("n_ts disagrees with mesh axes", body);
    if (meta.at("pixels_per_landscape").get<std::size_t>() != ds.mesh.pixel_count()) r.fail("pixel count disagrees with mesh", body);
    if (meta.at("landscape_count").get<std::size_t>() != ds.times.size()) r.fail("landscape count disagrees with times", body);
    ds.mesh.validate();
  } catch (const json::exception& e) {
    r.fail(std::string("bad metadata (") + e.what() + ")", body);
  } catch (const ParameterError& e) {
    r.fail(std::string("bad metadata (") + e.what() + ")", body);
  }
  const std::size_t px = ds.mesh.pixel_count();
  ds.landscapes.resize(ds.times.size());
  for (std::size_t i = 0; i < ds.times.size(); ++i) {
    auto& l = ds.landscapes[i];
    l.total_time = ds.times[i];
    l.mesh = ds.mesh;
    l.pixels.resize(px);
    r.f64s(l.pixels.data(), px, "landscape " + std::to_string(i));
  }
  r.expect_end();
  return ds;
}

inline LandscapeDataset load_dataset(const std::filesystem::path& path) {
  auto is = detail::open_in(path);
  return load_dataset(is, path.string());
}

inline json train_config_to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},         {"batch_size", c.batch_size}, {"learning_rate", c.learning_rate},
          {"l2_alpha", c.l2_alpha},     {"adam_beta1", c.adam_beta1}, {"adam_beta2", c.adam_beta2},
          {"adam_eps", c.adam_eps},     {"regularize_output", c.regularize_output}, {"seed", c.seed}};
}

inline TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.l2_alpha = j.value("l2_alpha", c.l2_alpha);
  c.adam_beta1 = j.value("adam_beta1", c.adam_beta1);
  c.adam_beta2 = j.value("adam_beta2", c.adam_beta2);
  c.adam_eps = j.value("adam_eps", c.adam_eps);
  c.regularize_output = j.value("regularize_output", c.regularize_output);
  c.seed = j.value("seed", c.seed);
  return c;
}

// A trained member as stored on disk.
struct NetworkFile {
  NetworkParams params;
  TrainConfig config;
  TrainReport report;
};

// MCTN: magic, u32 version, u64 metadata length, JSON metadata, then
// L1w L1b L2w L2b L3w L3b L4w L4b as row-major float64.
inline void save_network(const NetworkFile& net, std::ostream& os) {
  const auto& s = net.params.spec;
  json meta = {{"input_dim", s.input_dim},
               {"n_hidden", s.n_hidden},
               {"n_features", s.n_features},
               {"config", train_config_to_json(net.config)},
               {"seed", net.config.seed},
               {"report", {{"train_loss", net.report.train_loss}, {"train_mse", net.report.train_mse}, {"val_mse", net.report.val_mse}}}};
  if (!net.report.train_loss.empty()) {
    meta["final_train_loss"] = net.report.train_loss.back();
    meta["final_train_mse"] = net.report.train_mse.back();
    meta["final_val_mse"] = net.report.val_mse.back();
  }
  detail::ByteWriter w(os);
  detail::write_header(w, kNetworkMagic, meta);
  for (const auto& l : net.params.layers) {
    w.f64s(l.weights.data(), static_cast<std::size_t>(l.weights.size()));
    w.f64s(l.bias.data(), static_cast<std::size_t>(l.bias.size()));
  }
  if (!os) throw FormatError("save_network: write failed");
}

inline void save_network(const NetworkFile& net, const std::filesystem::path& path) {
  auto os = detail::open_out(path);
  save_network(net, os);
}

inline NetworkFile load_network(std::istream& is, const std::string& source = "network") {
  detail::ByteReader r(is, source);
  const json meta = detail::read_header(r, kNetworkMagic);
  NetworkFile net;
  try {
    const ArchitectureSpec spec{meta.at("input_dim").get<std::size_t>(), meta.at("n_hidden").get<std::size_t>(),
                                meta.at("n_features").get<std::size_t>()};
    net.params = zero_network(spec);
    net.config = train_config_from_json(meta.at("config"));
    const auto& rep = meta.at("report");
    net.report.train_loss = rep.at("train_loss").get<std::vector<double>>();
    net.report.train_mse = rep.at("train_mse").get<std::vector<double>>();
    net.report.val_mse = rep.at("val_mse").get<std::vector<double>>();
  } catch (const json::exception& e) {
    r.fail(std::string("bad metadata (") + e.what() + ")", 16);
  } catch (const ParameterError& e) {
    r.fail(std::string("bad metadata (") + e.what() + ")", 16);
  }
  static constexpr std::array<const char*, kLayerCount> names{"L1", "L2", "L3", "L4"};
  for (std::size_t l = 0; l < kLayerCount; ++l) {
    auto& layer = net.params.layers[l];
    r.f64s(layer.weights.data(), static_cast<std::size_t>(layer.weights.size()), std::string(names[l]) + " weights");
    r.f64s(layer.bias.data(), static_cast<std::size_t>(layer.bias.size()), std::string(names[l]) + " bias");
  }
  r.expect_end();
  return net;
}

inline NetworkFile load_network(const std::filesystem::path& path) {
  auto is = detail::open_in(path);
  return load_network(is, path.string());
}

// Plain-text split manifest: a "seed" line, then one line per set holding
// its name, size and indices.
inline void write_split(const FourWaySplit& s, std::ostream& os) {
  os << "# mctnet split manifest\n";
  os << "seed " << s.seed << "\n";
  auto put = [&](const char* name, const std::vector<std::size_t>& v) {
    os << name << " " << v.size();
    for (auto i : v) os << " " << i;
    os << "\n";
  };
  put("ae_train", s.ae_train);
  put("km_train", s.km_train);
  put("ae_val", s.ae_val);
  put("perf", s.perf);
}

inline void write_split(const FourWaySplit& s, const std::filesystem::path& path) {
  auto os = detail::open_out(path);
  write_split(s, os);
}

inline FourWaySplit read_split(std::istream& is) {
  FourWaySplit s;
  bool have_seed = false;
  int sets = 0;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "seed") {
      if (!(ls >> s.seed)) throw FormatError("split manifest: bad seed line");
      have_seed = true;
      continue;
    }
    std::vector<std::size_t>* dst = key == "ae_train" ? &s.ae_train
                                    : key == "km_train" ? &s.km_train
                                    : key == "ae_val"   ? &s.ae_val
                                    : key == "perf"     ? &s.perf
                                                        : nullptr;
    if (!dst) throw FormatError("split manifest: unknown key '" + key + "'");
    std::size_t n = 0;
    if (!(ls >> n)) throw FormatError("split manifest: missing size for " + key);
    dst->resize(n);
    for (auto& v : *dst)
      if (!(ls >> v)) throw FormatError("split manifest: short index list for " + key);
    ++sets;
  }
  if (!have_seed || sets != 4) throw FormatError("split manifest: incomplete");
  return s;
}

inline FourWaySplit read_split(const std::filesystem::path& path) {
  auto is = detail::open_in(path);
  return read_split(is);
}

// Lower-case hex SHA-256.
inline std::string sha256_hex(std::string_view bytes) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx.get(), bytes.data(), bytes.size()) != 1 || EVP_DigestFinal_ex(ctx.get(), md.data(), &len) != 1)
    throw Error("sha256: digest failed");
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
  return hex.str();
}

inline std::string sha256_file(const std::filesystem::path& path) {
  auto is = detail::open_in(path);
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1) throw Error("sha256: init failed");
  std::vector<char> buf(1 << 20);
  while (is) {
    is.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (is.gcount() > 0 && EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(is.gcount())) != 1)
      throw Error("sha256: update failed");
  }
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  if (EVP_DigestFinal_ex(ctx.get(), md.data(), &len) != 1) throw Error("sha256: final failed");
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
  return hex.str();
}

}  // namespace mctnet
