#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "rws/errors.hpp"
#include "rws/kernel.hpp"
#include "rws/renew.hpp"
#include "rws/types.hpp"

namespace rws {

/// How the persisted stream was parameterized; carried in the snapshot's
/// JSON header so a resumed fit keeps the same semantics.
struct SnapshotMeta {
  std::string estimator;          // "closed-form" or "newton"
  std::string estfun;             // estimating function name
  std::string kernel = "gaussian";
  double schedule_constant = 0.0; // > 0 when using the online c·N^(−1/5) schedule
  double fixed_bandwidth = 0.0;   // > 0 when a shared bandwidth was used
};

namespace detail {

inline constexpr char kSnapshotMagic[4] = {'R', 'W', 'S', '1'};
inline constexpr std::uint32_t kSnapshotVersion = 1;

inline std::uint64_t fnv1a(const unsigned char* data, std::size_t len,
                           std::uint64_t h = 0xCBF29CE484222325ULL) {
  for (std::size_t i = 0; i < len; ++i) {
    h ^= data[i];
    h *= 0x100000001B3ULL;
  }
  return h;
}

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_f64(std::string& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

class Reader {
 public:
  Reader(const unsigned char* p, std::size_t n) : p_(p), n_(n) {}
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  unsigned char byte() {
    need(1);
    return p_[pos_++];
  }
  const unsigned char* raw(std::size_t len) {
    need(len);
    const unsigned char* r = p_ + pos_;
    pos_ += len;
    return r;
  }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return n_ - pos_; }

 private:
  void need(std::size_t k) const {
    if (pos_ + k > n_) throw SnapshotCorruptionError("snapshot: truncated file");
  }
  const unsigned char* p_;
  std::size_t n_;
  std::size_t pos_ = 0;
};

}  // namespace detail

/// Writes a snapshot: magic `RWS1`, version, JSON metadata, little-endian
/// binary payload (grid points, estimates, weight matrices, solve flags)
/// and a trailing 64-bit checksum over everything after the magic.
inline void save_state(const RenewableState& state, const SnapshotMeta& meta,
                       const std::string& path) {
  nlohmann::json j;
  j["estimator"] = meta.estimator;
  j["estfun"] = meta.estfun;
  j["kernel"] = meta.kernel;
  j["schedule_constant"] = meta.schedule_constant;
  j["fixed_bandwidth"] = meta.fixed_bandwidth;
  j["dim"] = state.dim();
  j["grid_points"] = state.grid().size();
  j["support"] = {state.grid().lo(), state.grid().hi()};
  j["trim"] = state.grid().trim();
  j["batch_count"] = state.batch_count();
  j["cumulative_n"] = state.cumulative_n();
  j["newton_failures"] = state.newton_failures();
  const std::string header = j.dump();

  std::string body;  // everything after the magic, checksum excluded
  detail::put_u32(body, detail::kSnapshotVersion);
  detail::put_u32(body, static_cast<std::uint32_t>(header.size()));
  body += header;
  const std::size_t g = state.grid().size();
  const int d = state.dim();
  for (std::size_t i = 0; i < g; ++i) detail::put_f64(body, state.grid()[i]);
  for (std::size_t i = 0; i < g; ++i)
    for (int c = 0; c < d; ++c) detail::put_f64(body, state.estimate(i)[c]);
  for (std::size_t i = 0; i < g; ++i)
    for (int c = 0; c < d * d; ++c) detail::put_f64(body, state.weight_sum(i)[c]);
  for (std::size_t i = 0; i < g; ++i)
    body.push_back(state.solve_flags()[i] ? '\1' : '\0');

  std::string out;
  out.append(detail::kSnapshotMagic, 4);
  out += body;
  detail::put_u64(out, detail::fnv1a(reinterpret_cast<const unsigned char*>(body.data()),
                                     body.size()));

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("snapshot: cannot open '" + path + "' for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw DataError("snapshot: write failed for '" + path + "'");
}

inline std::pair<RenewableState, SnapshotMeta> load_state(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("snapshot: cannot open '" + path + "'");
  std::string blob((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (blob.size() < 4 + 8 + 8 || std::memcmp(blob.data(), detail::kSnapshotMagic, 4) != 0)
    throw SnapshotCorruptionError("snapshot: bad magic");

  const auto* bytes = reinterpret_cast<const unsigned char*>(blob.data());
  const std::size_t body_len = blob.size() - 4 - 8;
  detail::Reader tail(bytes + 4 + body_len, 8);
  const std::uint64_t stored = tail.u64();
  const std::uint64_t actual = detail::fnv1a(bytes + 4, body_len);
  if (stored != actual) throw SnapshotCorruptionError("snapshot: checksum mismatch");

  detail::Reader r(bytes + 4, body_len);
  const std::uint32_t version = r.u32();
  if (version > detail::kSnapshotVersion)
    throw SnapshotVersionError("snapshot: unsupported version " + std::to_string(version));
  const std::uint32_t header_len = r.u32();
  nlohmann::json j;
  try {
    const unsigned char* h = r.raw(header_len);
    j = nlohmann::json::parse(h, h + header_len);
  } catch (const nlohmann::json::exception&) {
    throw SnapshotCorruptionError("snapshot: bad metadata block");
  }

  SnapshotMeta meta;
  std::size_t g;
  int d;
  double lo, hi, trim;
  int batch_count;
  std::int64_t cum_n, failures;
  try {
    meta.estimator = j.at("estimator").get<std::string>();
    meta.estfun = j.at("estfun").get<std::string>();
    meta.kernel = j.at("kernel").get<std::string>();
    meta.schedule_constant = j.at("schedule_constant").get<double>();
    meta.fixed_bandwidth = j.at("fixed_bandwidth").get<double>();
    d = j.at("dim").get<int>();
    g = j.at("grid_points").get<std::size_t>();
    lo = j.at("support").at(0).get<double>();
    hi = j.at("support").at(1).get<double>();
    trim = j.at("trim").get<double>();
    batch_count = j.at("batch_count").get<int>();
    cum_n = j.at("cumulative_n").get<std::int64_t>();
    failures = j.at("newton_failures").get<std::int64_t>();
  } catch (const nlohmann::json::exception&) {
    throw SnapshotCorruptionError("snapshot: missing metadata field");
  }

  std::vector<double> pts(g), est(g * d), wsum(g * d * d);
  for (auto& v : pts) v = r.f64();
  for (auto& v : est) v = r.f64();
  for (auto& v : wsum) v = r.f64();
  std::vector<char> flags(g);
  for (auto& v : flags) v = static_cast<char>(r.byte());
  if (r.remaining() != 0) throw SnapshotCorruptionError("snapshot: trailing bytes");

  EvaluationGrid grid(std::move(pts), lo, hi, trim);
  return {RenewableState::restore(std::move(grid), d, std::move(wsum), std::move(est),
                                  std::move(flags), batch_count, cum_n, failures),
          meta};
}

namespace detail {

inline double parse_csv_real(const std::string& field, long line) {
  const char* s = field.c_str();
  char* end = nullptr;
  const double v = std::strtod(s, &end);
  if (end == s || *end != '\0') throw DataError("batch csv: malformed number '" + field + "'", line);
  if (!std::isfinite(v)) throw DataError("batch csv: non-finite value", line);
  return v;
}

}  // namespace detail

/// Batch CSV: header `x,y`, one observation per row, decimal-point reals.
/// Values written with 17 significant digits round-trip doubles exactly.
inline Batch read_batch_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataError("batch csv: cannot open '" + path + "'");
  std::string line;
  long line_no = 0;
  if (!std::getline(f, line)) throw DataError("batch csv: empty file '" + path + "'");
  ++line_no;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "x,y") throw DataError("batch csv: expected header 'x,y'", line_no);

  Batch b;
  while (std::getline(f, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos || line.find(',', comma + 1) != std::string::npos)
      throw DataError("batch csv: expected exactly two fields", line_no);
    b.xs.push_back(detail::parse_csv_real(line.substr(0, comma), line_no));
    b.ys.push_back(detail::parse_csv_real(line.substr(comma + 1), line_no));
  }
  if (b.xs.empty()) throw DataError("batch csv: no observations in '" + path + "'");
  return b;
}

inline void write_batch_csv(const Batch& batch, const std::string& path) {
  validate_batch(batch);
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw DataError("batch csv: cannot open '" + path + "' for writing");
  f << "x,y\n";
  char buf[96];
  for (std::size_t i = 0; i < batch.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g\n", batch.xs[i], batch.ys[i]);
    f << buf;
  }
  if (!f) throw DataError("batch csv: write failed for '" + path + "'");
}

}  // namespace rws
