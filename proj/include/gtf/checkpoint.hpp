#ifndef GTF_CHECKPOINT_HPP
#define GTF_CHECKPOINT_HPP

#include <gtf/binary_io.hpp>
#include <gtf/common.hpp>
#include <gtf/shplrnn.hpp>

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <map>
#include <sstream>
#include <string>

namespace gtf {

inline constexpr char kCheckpointMagic[4] = {'S', 'H', 'P', 'L'};
inline constexpr std::uint16_t kCheckpointVersion = 1;

enum class ObservationMode { Identity, Fixed, Trainable };

inline const char* to_string(ObservationMode m) {
  switch (m) {
    case ObservationMode::Identity: return "identity";
    case ObservationMode::Fixed: return "fixed";
    case ObservationMode::Trainable: return "trainable";
  }
  return "unknown";
}

inline ObservationMode observation_mode_from_string(const std::string& s) {
  if (s == "identity") return ObservationMode::Identity;
  if (s == "fixed") return ObservationMode::Fixed;
  if (s == "trainable") return ObservationMode::Trainable;
  throw ConfigError("unknown observation mode '" + s + "' (expected identity, fixed or trainable)");
}

inline ObservationMode observation_mode_of(const ObservationModel& obs) {
  if (obs.identity_mode()) return ObservationMode::Identity;
  return obs.trainable() ? ObservationMode::Trainable : ObservationMode::Fixed;
}

struct Checkpoint {
  ShPLRNNParams params;
  ObservationModel obs;
};

struct CheckpointManifest {
  std::string config_hash;
  std::int64_t epoch = 0;
  double alpha = 0.0;
  ObservationMode observation = ObservationMode::Identity;
  std::string saved_at;  // wall-clock timestamp; the only non-reproducible field
};

namespace detail {

inline void write_matrix_rowmajor(io::ByteWriter& w, const Matrix& m) {
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j) w.f64(m(i, j));
}

inline Matrix read_matrix_rowmajor(io::ByteReader& r, Index rows, Index cols) {
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) m(i, j) = r.f64();
  return m;
}

}  // namespace detail

// Matrices are stored row-major. B is always stored, identity included.
inline std::vector<unsigned char> encode_checkpoint(const ShPLRNNParams& p, const ObservationModel& obs) {
  p.validate();
  io::ByteWriter w;
  w.bytes(kCheckpointMagic, 4);
  w.uint<std::uint16_t>(kCheckpointVersion);
  w.uint<std::uint32_t>(static_cast<std::uint32_t>(p.latent_dim()));
  w.uint<std::uint32_t>(static_cast<std::uint32_t>(p.hidden_dim()));
  w.uint<std::uint32_t>(static_cast<std::uint32_t>(obs.obs_dim()));
  w.uint<std::uint8_t>(p.clipped ? 1 : 0);
  w.f64_block(p.A.data(), static_cast<std::size_t>(p.A.size()));
  detail::write_matrix_rowmajor(w, p.W1);
  detail::write_matrix_rowmajor(w, p.W2);
  w.f64_block(p.h1.data(), static_cast<std::size_t>(p.h1.size()));
  w.f64_block(p.h2.data(), static_cast<std::size_t>(p.h2.size()));
  detail::write_matrix_rowmajor(w, obs.B());
  return w.buffer();
}

inline Checkpoint decode_checkpoint(std::vector<unsigned char> bytes, ObservationMode mode, const std::string& what) {
  io::ByteReader r(std::move(bytes), what);
  char magic[4];
  r.bytes(magic, 4);
  if (!std::equal(magic, magic + 4, kCheckpointMagic)) throw FormatError(what + ": not an SHPL checkpoint (bad magic)");
  const auto version = r.uint<std::uint16_t>();
  if (version != kCheckpointVersion) {
    throw FormatError(what + ": unsupported checkpoint version " + std::to_string(version));
  }
  const auto M = static_cast<Index>(r.uint<std::uint32_t>());
  const auto L = static_cast<Index>(r.uint<std::uint32_t>());
  const auto N = static_cast<Index>(r.uint<std::uint32_t>());
  const auto clipped = r.uint<std::uint8_t>();
  if (M < 1 || L < 1 || N < 1 || clipped > 1) throw FormatError(what + ": invalid checkpoint header");
  const std::size_t expected = 8 * static_cast<std::size_t>(M + M * L + L * M + M + L + N * M);
  r.need(expected);
  Checkpoint c;
  c.params = ShPLRNNParams::zeros(M, L, clipped == 1);
  r.f64_block(c.params.A.data(), static_cast<std::size_t>(M));
  c.params.W1 = detail::read_matrix_rowmajor(r, M, L);
  c.params.W2 = detail::read_matrix_rowmajor(r, L, M);
  r.f64_block(c.params.h1.data(), static_cast<std::size_t>(M));
  r.f64_block(c.params.h2.data(), static_cast<std::size_t>(L));
  Matrix B = detail::read_matrix_rowmajor(r, N, M);
  r.expect_end();
  try {
    c.params.validate();
  } catch (const Error& e) {
    throw FormatError(what + ": " + e.what());
  }
  if (mode == ObservationMode::Identity) {
    if (N != M || !B.isIdentity(0.0)) throw FormatError(what + ": identity observation mode but B is not the identity");
    c.obs = ObservationModel::identity(N);
  } else {
    c.obs = ObservationModel::from_matrix(std::move(B), mode == ObservationMode::Trainable);
  }
  return c;
}

inline std::string manifest_path(const std::string& checkpoint_path) { return checkpoint_path + ".manifest"; }

inline std::string format_manifest(const CheckpointManifest& m) {
  std::ostringstream os;
  os << "format=SHPL\n"
     << "version=" << kCheckpointVersion << '\n'
     << "config_hash=" << m.config_hash << '\n'
     << "epoch=" << m.epoch << '\n'
     << "alpha=" << io::format_double(m.alpha) << '\n'
     << "observation=" << to_string(m.observation) << '\n';
  if (!m.saved_at.empty()) os << "saved_at=" << m.saved_at << '\n';
  return os.str();
}

inline std::map<std::string, std::string> parse_key_values(const std::string& text, const std::string& what) {
  std::map<std::string, std::string> kv;
  std::istringstream is(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos || line[first] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw FormatError(what + " line " + std::to_string(line_no) + ": expected key=value");
    }
    auto strip = [](std::string s) {
      const auto b = s.find_first_not_of(" \t");
      const auto e = s.find_last_not_of(" \t");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    kv[strip(line.substr(0, eq))] = strip(line.substr(eq + 1));
  }
  return kv;
}

inline CheckpointManifest parse_manifest(const std::string& text, const std::string& what) {
  const auto kv = parse_key_values(text, what);
  CheckpointManifest m;
  auto get = [&](const char* key) -> std::string {
    const auto it = kv.find(key);
    if (it == kv.end()) throw FormatError(what + ": missing key '" + key + "'");
    return it->second;
  };
  if (get("format") != "SHPL") throw FormatError(what + ": not a checkpoint manifest");
  m.config_hash = get("config_hash");
  try {
    m.epoch = std::stoll(get("epoch"));
    m.alpha = std::stod(get("alpha"));
  } catch (const std::logic_error&) {
    throw FormatError(what + ": malformed numeric field");
  }
  try {
    m.observation = observation_mode_from_string(get("observation"));
  } catch (const ConfigError& e) {
    throw FormatError(what + ": " + e.what());
  }
  if (const auto it = kv.find("saved_at"); it != kv.end()) m.saved_at = it->second;
  return m;
}

inline void save_checkpoint(const std::string& path, const ShPLRNNParams& p, const ObservationModel& obs,
                            const CheckpointManifest& manifest) {
  io::write_file_bytes(path, encode_checkpoint(p, obs));
  CheckpointManifest m = manifest;
  m.observation = observation_mode_of(obs);
  io::write_text_file(manifest_path(path), format_manifest(m));
}

// Without a manifest the observation mode is inferred: identity if B is the
// square identity, otherwise fixed.
inline Checkpoint load_checkpoint(const std::string& path, CheckpointManifest* manifest_out = nullptr) {
  auto bytes = io::read_file_bytes(path);
  ObservationMode mode = ObservationMode::Fixed;
  const std::string mpath = manifest_path(path);
  if (std::filesystem::exists(mpath)) {
    const CheckpointManifest m = parse_manifest(io::read_text_file(mpath), "'" + mpath + "'");
    mode = m.observation;
    if (manifest_out) *manifest_out = m;
    return decode_checkpoint(std::move(bytes), mode, "'" + path + "'");
  }
  // peek at the header to decide whether B can be the identity
  Checkpoint c = decode_checkpoint(bytes, ObservationMode::Fixed, "'" + path + "'");
  if (c.obs.obs_dim() == c.obs.latent_dim() && c.obs.B().isIdentity(0.0)) {
    c.obs = ObservationModel::identity(c.obs.obs_dim());
  }
  if (manifest_out) *manifest_out = CheckpointManifest{"", 0, 0.0, observation_mode_of(c.obs), ""};
  return c;
}

}  // namespace gtf

#endif  // GTF_CHECKPOINT_HPP
