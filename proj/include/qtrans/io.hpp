#pragma once

// Run artifacts.  Every file a command emits goes through here: a small
// binary container for field snapshots, CSV exports with round-trip decimal
// formatting, and JSON report assembly.  All builders are deterministic --
// identical inputs produce identical bytes.

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "qtrans/evolution.hpp"
#include "qtrans/grid.hpp"
#include "qtrans/observables.hpp"
#include "qtrans/operators.hpp"
#include "qtrans/wavefunction.hpp"

namespace qtrans {

using Json = nlohmann::json;

/// FNV-1a over the canonical config text; keys every artifact to its run.
inline std::uint64_t fnv1a(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

/// Fixed-width lowercase hex, as printed in artifact headers.
inline std::string hash_hex(std::uint64_t h) {
  const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[static_cast<std::size_t>(i)] = digits[h & 0xf];
    h >>= 4;
  }
  return s;
}

/// Shortest decimal string that parses back to exactly the same double.
inline std::string format_double(double v) {
  char buf[40];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

/// Provenance stamped into every artifact.
struct ArtifactMeta {
  std::uint64_t config_hash = 0;
  std::uint64_t seed = 0;
};

inline std::string meta_comment(const ArtifactMeta& m) {
  return "# config_hash=" + hash_hex(m.config_hash) + " seed=" + std::to_string(m.seed) + "\n";
}

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f64(std::string& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_u64(out, bits);
}

struct ByteReader {
  std::string_view data;
  std::size_t pos = 0;

  void need(std::size_t n) const {
    if (pos + n > data.size()) throw std::runtime_error("snapshot: truncated file");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data[pos + i])) << (8 * i);
    pos += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data[pos + i])) << (8 * i);
    pos += 8;
    return v;
  }
  double f64() {
    const std::uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
};

}  // namespace detail

// Field container layout, all little-endian:
//   bytes 0-7   magic "QTSNAP01"
//   u32         dim
//   u32         dtype: 0 real, 1 complex
//   u64         points per axis
//   f64         half-width per axis
//   f64         time
//   u64         config hash
//   u64         seed
//   u64         entry count (= points^dim)
//   payload     count f64 values, or 2*count interleaved (re, im)
inline constexpr char kSnapshotMagic[8] = {'Q', 'T', 'S', 'N', 'A', 'P', '0', '1'};

namespace detail {

inline std::string encode_field_header(const GridPtr& g, std::uint32_t dtype, double time,
                                       const ArtifactMeta& meta) {
  std::string out(kSnapshotMagic, sizeof(kSnapshotMagic));
  put_u32(out, static_cast<std::uint32_t>(g->dim()));
  put_u32(out, dtype);
  put_u64(out, static_cast<std::uint64_t>(g->points_per_axis()));
  put_f64(out, g->half_width());
  put_f64(out, time);
  put_u64(out, meta.config_hash);
  put_u64(out, meta.seed);
  put_u64(out, static_cast<std::uint64_t>(g->size()));
  return out;
}

}  // namespace detail

inline std::string encode_snapshot(const RealWaveFunction& q, const ArtifactMeta& meta) {
  std::string out = detail::encode_field_header(q.grid, 0, q.time, meta);
  out.reserve(out.size() + 8 * q.values.size());
  for (double v : q.values) detail::put_f64(out, v);
  return out;
}

inline std::string encode_snapshot(const ComplexWaveFunction& psi, const ArtifactMeta& meta) {
  std::string out = detail::encode_field_header(psi.grid, 1, psi.time, meta);
  out.reserve(out.size() + 16 * psi.values.size());
  for (const cplx& v : psi.values) {
    detail::put_f64(out, v.real());
    detail::put_f64(out, v.imag());
  }
  return out;
}

/// Decoded container, before any interpretation as a state.
struct LoadedSnapshot {
  GridPtr grid;
  int dtype = 0;  // 0 real, 1 complex
  double time = 0.0;
  ArtifactMeta meta;
  std::vector<double> reals;
  std::vector<cplx> complexes;
};

inline LoadedSnapshot decode_snapshot(std::string_view bytes) {
  if (bytes.size() < sizeof(kSnapshotMagic) ||
      std::memcmp(bytes.data(), kSnapshotMagic, sizeof(kSnapshotMagic)) != 0)
    throw std::runtime_error("snapshot: bad magic; not a field container");
  detail::ByteReader r{bytes, sizeof(kSnapshotMagic)};

  LoadedSnapshot snap;
  const auto dim = r.u32();
  const auto dtype = r.u32();
  const auto n = r.u64();
  const double L = r.f64();
  snap.time = r.f64();
  snap.meta.config_hash = r.u64();
  snap.meta.seed = r.u64();
  const auto count = r.u64();

  if (dim < 1 || dim > 3) throw std::runtime_error("snapshot: dim must be 1, 2, or 3");
  if (dtype > 1) throw std::runtime_error("snapshot: unknown dtype");
  snap.dtype = static_cast<int>(dtype);
  snap.grid = ConfigurationGrid::create(static_cast<int>(dim), static_cast<int>(n), L);
  if (count != snap.grid->size())
    throw std::runtime_error("snapshot: entry count does not match the grid");

  if (dtype == 0) {
    snap.reals.resize(count);
    for (auto& v : snap.reals) v = r.f64();
  } else {
    snap.complexes.resize(count);
    for (auto& v : snap.complexes) {
      const double re = r.f64();
      const double im = r.f64();
      v = cplx(re, im);
    }
  }
  return snap;
}

inline RealWaveFunction as_real_state(const LoadedSnapshot& snap) {
  if (snap.dtype != 0)
    throw std::runtime_error("snapshot: holds a complex field, expected real");
  return RealWaveFunction{snap.grid, snap.reals, snap.time};
}

inline ComplexWaveFunction as_complex_state(const LoadedSnapshot& snap) {
  if (snap.dtype != 1)
    throw std::runtime_error("snapshot: holds a real field, expected complex");
  return ComplexWaveFunction{snap.grid, snap.complexes, snap.time, false};
}

inline void write_bytes(const std::string& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("io: cannot write '" + path + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("io: short write to '" + path + "'");
}

inline std::string read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("io: cannot open '" + path + "'");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return bytes;
}

inline void write_snapshot(const std::string& path, const RealWaveFunction& q,
                           const ArtifactMeta& meta) {
  write_bytes(path, encode_snapshot(q, meta));
}

inline void write_snapshot(const std::string& path, const ComplexWaveFunction& psi,
                           const ArtifactMeta& meta) {
  write_bytes(path, encode_snapshot(psi, meta));
}

inline LoadedSnapshot read_snapshot(const std::string& path) {
  return decode_snapshot(read_bytes(path));
}

/// time, raw norm, one column per monitor.
inline std::string record_to_csv(const EvolutionRecord& rec, const ArtifactMeta& meta) {
  std::string out = meta_comment(meta);
  out += "time,norm";
  for (const auto& label : rec.monitor_labels) {
    out += ',';
    for (char c : label) out += (c == ',' || c == '\n') ? ';' : c;
  }
  out += '\n';
  for (std::size_t i = 0; i < rec.times.size(); ++i) {
    out += format_double(rec.times[i]);
    out += ',';
    out += format_double(rec.norms[i]);
    for (const auto& column : rec.monitor_values) {
      out += ',';
      out += format_double(column[i]);
    }
    out += '\n';
  }
  return out;
}

/// Point-per-row export of a sampled field; covers one- and two-axis grids.
inline std::string field_to_csv(const RealWaveFunction& q, const ArtifactMeta& meta) {
  const int dim = q.grid->dim();
  if (dim > 2)
    throw std::runtime_error("field_to_csv: CSV export covers one- and two-axis grids only");
  std::string out = meta_comment(meta);
  out += (dim == 1) ? "sigma1,value\n" : "sigma1,sigma2,value\n";
  double pt[3];
  for (std::size_t i = 0; i < q.values.size(); ++i) {
    q.grid->point(i, pt);
    out += format_double(pt[0]);
    if (dim == 2) {
      out += ',';
      out += format_double(pt[1]);
    }
    out += ',';
    out += format_double(q.values[i]);
    out += '\n';
  }
  return out;
}

/// Worst violation of the E -> -E pairing across a set of eigenvalues.
inline double pairing_defect(const std::vector<double>& energies) {
  double worst = 0.0;
  for (double e : energies) {
    double best = std::numeric_limits<double>::infinity();
    for (double f : energies) best = std::min(best, std::abs(e + f));
    worst = std::max(worst, best);
  }
  return energies.empty() ? 0.0 : worst;
}

/// index, energy, residual (+ generator expectation when supplied).
inline std::string spectrum_to_csv(const SpectrumResult& sp, const std::vector<double>& angular,
                                   const ArtifactMeta& meta) {
  std::string out = meta_comment(meta);
  out += "# pairing_defect=" + format_double(pairing_defect(sp.eigenvalues)) + "\n";
  out += angular.empty() ? "index,energy,residual\n" : "index,energy,residual,L\n";
  for (std::size_t i = 0; i < sp.eigenvalues.size(); ++i) {
    out += std::to_string(i);
    out += ',';
    out += format_double(sp.eigenvalues[i]);
    out += ',';
    out += format_double(sp.residuals[i]);
    if (!angular.empty()) {
      out += ',';
      out += format_double(angular[i]);
    }
    out += '\n';
  }
  return out;
}

inline Json conservation_to_json(const std::vector<ConservationReport>& reports,
                                 const ArtifactMeta& meta) {
  Json monitors = Json::array();
  for (const auto& r : reports) {
    monitors.push_back({{"label", r.label},
                        {"reference", r.reference},
                        {"max_drift", r.max_drift},
                        {"tolerance", r.tolerance},
                        {"conserved", r.conserved},
                        {"diagnostic_only", r.diagnostic_only}});
  }
  return Json{{"config_hash", hash_hex(meta.config_hash)},
              {"seed", meta.seed},
              {"monitors", monitors}};
}

inline void write_json(const std::string& path, const Json& j) {
  write_bytes(path, j.dump(2) + "\n");
}

}  // namespace qtrans
