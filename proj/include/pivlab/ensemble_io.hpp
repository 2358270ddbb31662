#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "pivlab/error.hpp"
#include "pivlab/format.hpp"
#include "pivlab/sim.hpp"

namespace pivlab {

// Columnar CSV: path, step, t, S, dB, jump_sum, tau<n>..., [hidden], [pi].
// dB and jump_sum describe the step that starts at the row's grid point and
// are empty on the last row.
inline void write_ensemble_csv(const std::string& path, const PathEnsemble& e,
                               std::span<const StoppingLayer> layers = {}) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path);
  out << "path,step,t,S,dB,jump_sum";
  for (const auto& l : layers) out << ",tau" << l.level;
  if (e.hidden) out << ",hidden";
  if (e.filter) out << ",pi";
  out << '\n';
  const int n = e.grid.n_steps;
  for (int p = 0; p < e.n_paths; ++p) {
    for (int j = 0; j <= n; ++j) {
      out << p << ',' << j << ',' << format_double(e.grid.time(j)) << ',' << format_double(e.s(p, j))
          << ',';
      if (j < n) out << format_double(e.db(p, j)) << ',' << format_double(e.has_jumps() ? e.jump_sum(p, j) : 0.0);
      else out << ',';
      for (const auto& l : layers) out << ',' << l.tau_index[static_cast<std::size_t>(p)];
      if (e.hidden) out << ',' << (*e.hidden)(p, j);
      if (e.filter) out << ',' << format_double((*e.filter)(p, j));
      out << '\n';
    }
  }
}

// Binary cache: 8-byte magic "PIVLAB01", uint32 version, uint32 flags, then
// little-endian fields (see README). Flags: bit 0 jumps, bit 1 hidden, bit 2 filter.
namespace detail {

inline constexpr char kMagic[8] = {'P', 'I', 'V', 'L', 'A', 'B', '0', '1'};
inline constexpr std::uint32_t kVersion = 1;

template <class T>
void put(std::ofstream& out, T v) {
  static_assert(std::endian::native == std::endian::little, "binary cache assumes little-endian host");
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}
template <class T>
T get(std::ifstream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw Error("ensemble cache: truncated file");
  return v;
}
inline void put_grid(std::ofstream& out, const PathGrid& g) {
  out.write(reinterpret_cast<const char*>(g.data().data()),
            static_cast<std::streamsize>(g.data().size() * sizeof(double)));
}
inline void get_grid(std::ifstream& in, PathGrid& g) {
  in.read(reinterpret_cast<char*>(g.data().data()),
          static_cast<std::streamsize>(g.data().size() * sizeof(double)));
  if (!in) throw Error("ensemble cache: truncated file");
}

}  // namespace detail

inline void write_ensemble_binary(const std::string& path, const PathEnsemble& e) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path);
  out.write(detail::kMagic, 8);
  detail::put<std::uint32_t>(out, detail::kVersion);
  const std::uint32_t flags = (e.has_jumps() ? 1u : 0u) | (e.hidden ? 2u : 0u) | (e.filter ? 4u : 0u);
  detail::put<std::uint32_t>(out, flags);
  detail::put<std::uint64_t>(out, e.seed);
  detail::put<std::int64_t>(out, e.n_paths);
  detail::put<std::int64_t>(out, e.grid.n_steps);
  detail::put<double>(out, e.grid.horizon);
  detail::put<double>(out, e.s0);
  detail::put<std::uint64_t>(out, e.model_name.size());
  out.write(e.model_name.data(), static_cast<std::streamsize>(e.model_name.size()));
  detail::put_grid(out, e.s);
  detail::put_grid(out, e.db);
  if (e.has_jumps()) {
    detail::put_grid(out, e.jump_sum);
    detail::put_grid(out, e.compensator);
    detail::put<std::uint64_t>(out, e.jump_events.size());
    for (auto off : e.jump_offsets) detail::put<std::uint64_t>(out, off);
    for (const auto& ev : e.jump_events) {
      detail::put<std::int64_t>(out, ev.step);
      detail::put<double>(out, ev.mark);
      detail::put<double>(out, ev.size);
    }
  }
  if (e.hidden)
    for (int v : e.hidden->data()) detail::put<std::int64_t>(out, v);
  if (e.filter) detail::put_grid(out, *e.filter);
  if (!out) throw Error("cannot write " + path);
}

inline PathEnsemble read_ensemble_binary(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, detail::kMagic, 8) != 0) throw Error("ensemble cache: bad magic");
  if (detail::get<std::uint32_t>(in) != detail::kVersion) throw Error("ensemble cache: unsupported version");
  const auto flags = detail::get<std::uint32_t>(in);
  PathEnsemble e;
  e.seed = detail::get<std::uint64_t>(in);
  e.n_paths = static_cast<int>(detail::get<std::int64_t>(in));
  const int n = static_cast<int>(detail::get<std::int64_t>(in));
  const double horizon = detail::get<double>(in);
  e.grid = TimeGrid::make(horizon, n);
  e.s0 = detail::get<double>(in);
  e.model_name.resize(detail::get<std::uint64_t>(in));
  in.read(e.model_name.data(), static_cast<std::streamsize>(e.model_name.size()));
  e.s = PathGrid(e.n_paths, n + 1);
  e.db = PathGrid(e.n_paths, n);
  detail::get_grid(in, e.s);
  detail::get_grid(in, e.db);
  if (flags & 1u) {
    e.jump_sum = PathGrid(e.n_paths, n);
    e.compensator = PathGrid(e.n_paths, n);
    detail::get_grid(in, e.jump_sum);
    detail::get_grid(in, e.compensator);
    const auto count = detail::get<std::uint64_t>(in);
    e.jump_offsets.resize(static_cast<std::size_t>(e.n_paths) + 1);
    for (auto& off : e.jump_offsets) off = detail::get<std::uint64_t>(in);
    e.jump_events.resize(count);
    for (auto& ev : e.jump_events) {
      ev.step = static_cast<int>(detail::get<std::int64_t>(in));
      ev.mark = detail::get<double>(in);
      ev.size = detail::get<double>(in);
    }
  }
  if (flags & 2u) {
    e.hidden = PathMatrix<int>(e.n_paths, n + 1);
    for (int& v : e.hidden->data()) v = static_cast<int>(detail::get<std::int64_t>(in));
  }
  if (flags & 4u) {
    e.filter = PathGrid(e.n_paths, n + 1);
    detail::get_grid(in, *e.filter);
  }
  finalize_ensemble(e);
  return e;
}

}  // namespace pivlab
