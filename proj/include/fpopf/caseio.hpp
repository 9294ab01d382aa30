// Case-file input/output.
//
// Two formats are accepted and sniffed automatically:
//   - a MATPOWER-style subset (`mpc.baseMVA`, `mpc.bus`, `mpc.gen`,
//     `mpc.branch`, `mpc.gencost` matrices), adapted at parse time to the
//     lossless model: series resistance and shunt conductance are dropped,
//     transformer taps/shifts are removed, and line-charging susceptance is
//     folded into the endpoint bus shunts;
//   - a native line-oriented format that mirrors the Bus/Line/Generator
//     fields exactly and round-trips bit-for-bit through the serializer.
//
// Native grammar (one record per line, `#` starts a comment):
//   base_mva <v>
//   bus <id> vmin <v> vmax <v> pd <v> qd <v> bsh <v> slack <0|1>
//   line <id> from <bus> to <bus> y <|Y_ij|> ilim <v> itrip <v>
//   gen <id> bus <bus> pmin <v> pmax <v> qmin <v> qmax <v> cost <c2> <c1> <c0> mass <v>
//   dispatch gen <id> p <v> v <v>
#pragma once

#include <cmath>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "fpopf/common.hpp"
#include "fpopf/network.hpp"

namespace fpopf {

struct ParseOptions {
  double load_scale = 1.0;
  // Trip threshold as a multiple of the operating limit.  MATPOWER input
  // always derives i_trip from this (default 1.10); native files keep their
  // stored i_trip unless the caller overrides the factor explicitly.
  std::optional<double> itrip_factor;
  bool zero_shunts = false;
  // Current limit assigned to branches whose rating is absent/unlimited,
  // keeping the i_lim > 0 invariant while staying non-binding.
  double unlimited_rate = 99.0;
};

namespace detail {

inline std::string strip_matlab_comments(const std::string& text) {
  std::string out;
  out.reserve(text.size());
  bool in_comment = false;
  for (char c : text) {
    if (c == '%') in_comment = true;
    if (c == '\n') in_comment = false;
    out.push_back(in_comment ? ' ' : c);
  }
  return out;
}

inline std::vector<std::vector<double>> parse_matrix_block(const std::string& text,
                                                           const std::string& name,
                                                           bool required) {
  const std::string key = "mpc." + name;
  std::size_t pos = text.find(key);
  while (pos != std::string::npos) {
    // Require the next non-space char after the key to be '=' so that
    // e.g. "mpc.buses" does not match "mpc.bus".
    std::size_t p = pos + key.size();
    while (p < text.size() && std::isspace(static_cast<unsigned char>(text[p]))) ++p;
    if (p < text.size() && text[p] == '=') break;
    pos = text.find(key, pos + 1);
  }
  if (pos == std::string::npos) {
    if (required) throw ValidationError("missing matrix mpc." + name);
    return {};
  }
  const std::size_t open = text.find('[', pos);
  const std::size_t close = text.find(']', open);
  if (open == std::string::npos || close == std::string::npos)
    throw ValidationError("malformed matrix mpc." + name);
  std::string body = text.substr(open + 1, close - open - 1);
  for (char& c : body)
    if (c == ';' || c == ',') c = '\n';
  std::vector<std::vector<double>> rows;
  std::istringstream lines(body);
  std::string line;
  while (std::getline(lines, line)) {
    std::istringstream ls(line);
    std::vector<double> row;
    double v = 0.0;
    while (ls >> v) row.push_back(v);
    std::string leftover;
    if (!ls.eof() && ls.fail()) {
      ls.clear();
      ls >> leftover;
      throw ValidationError("bad token '" + leftover + "' in mpc." + name);
    }
    if (!row.empty()) rows.push_back(std::move(row));
  }
  return rows;
}

inline double parse_scalar_assignment(const std::string& text, const std::string& name) {
  const std::string key = "mpc." + name;
  const std::size_t pos = text.find(key);
  if (pos == std::string::npos) throw ValidationError("missing mpc." + name);
  const std::size_t eq = text.find('=', pos);
  if (eq == std::string::npos) throw ValidationError("malformed mpc." + name);
  return std::stod(text.substr(eq + 1));
}

inline const double& col(const std::vector<double>& row, std::size_t idx,
                         const std::string& what) {
  if (idx >= row.size())
    throw ValidationError(what + ": row has only " + std::to_string(row.size()) +
                          " columns, need " + std::to_string(idx + 1));
  return row[idx];
}

}  // namespace detail

inline Network parse_matpower(const std::string& text, const ParseOptions& opt = {}) {
  const std::string clean = detail::strip_matlab_comments(text);
  Network net;
  net.base_mva = detail::parse_scalar_assignment(clean, "baseMVA");
  if (!(net.base_mva > 0.0)) throw ValidationError("baseMVA must be positive");
  const double base = net.base_mva;

  const auto bus_rows = detail::parse_matrix_block(clean, "bus", true);
  const auto gen_rows = detail::parse_matrix_block(clean, "gen", true);
  const auto branch_rows = detail::parse_matrix_block(clean, "branch", true);
  const auto cost_rows = detail::parse_matrix_block(clean, "gencost", false);

  std::set<int> kept_bus_ids;
  for (const auto& r : bus_rows) {
    const int type = static_cast<int>(detail::col(r, 1, "bus"));
    if (type == 4) continue;  // out of service
    Bus b;
    b.id = static_cast<int>(detail::col(r, 0, "bus"));
    b.p_d = detail::col(r, 2, "bus") / base * opt.load_scale;
    b.q_d = detail::col(r, 3, "bus") / base * opt.load_scale;
    b.b_shunt = opt.zero_shunts ? 0.0 : detail::col(r, 5, "bus") / base;
    b.v_max = detail::col(r, 11, "bus");
    b.v_min = detail::col(r, 12, "bus");
    b.is_slack = (type == 3);
    net.buses.push_back(b);
    kept_bus_ids.insert(b.id);
  }

  const double trip_factor = opt.itrip_factor.value_or(1.10);
  int line_id = 0;
  for (const auto& r : branch_rows) {
    if (r.size() > 10 && detail::col(r, 10, "branch") == 0.0) continue;
    ++line_id;
    Line l;
    l.id = line_id;
    l.from_bus = static_cast<int>(detail::col(r, 0, "branch"));
    l.to_bus = static_cast<int>(detail::col(r, 1, "branch"));
    if (!kept_bus_ids.count(l.from_bus) || !kept_bus_ids.count(l.to_bus)) continue;
    const double x = detail::col(r, 3, "branch");
    if (!(x > 0.0))
      throw ValidationError("branch " + std::to_string(line_id) +
                            ": series reactance must be positive");
    l.susceptance_mag = 1.0 / x;  // taps and resistance removed
    const double rate_a = detail::col(r, 5, "branch");
    l.i_lim = (rate_a <= 0.0 || rate_a >= 9000.0) ? opt.unlimited_rate : rate_a / base;
    l.i_trip = trip_factor * l.i_lim;
    const double charging = detail::col(r, 4, "branch");
    if (!opt.zero_shunts && charging != 0.0) {
      for (Bus& b : net.buses) {
        if (b.id == l.from_bus || b.id == l.to_bus) b.b_shunt += 0.5 * charging;
      }
    }
    net.lines.push_back(l);
  }

  net.embedded_dispatch.present = true;
  int gen_id = 0;
  for (std::size_t row = 0; row < gen_rows.size(); ++row) {
    const auto& r = gen_rows[row];
    if (detail::col(r, 7, "gen") == 0.0) continue;  // out of service
    ++gen_id;
    Generator g;
    g.id = gen_id;
    g.bus = static_cast<int>(detail::col(r, 0, "gen"));
    if (!kept_bus_ids.count(g.bus))
      throw ValidationError("generator row " + std::to_string(row + 1) +
                            " attached to an out-of-service bus");
    g.q_max = detail::col(r, 3, "gen") / base;
    g.q_min = detail::col(r, 4, "gen") / base;
    g.p_max = detail::col(r, 8, "gen") / base;
    g.p_min = detail::col(r, 9, "gen") / base;
    if (!cost_rows.empty()) {
      if (row >= cost_rows.size())
        throw ValidationError("gencost has fewer rows than gen");
      const auto& c = cost_rows[row];
      const int model = static_cast<int>(detail::col(c, 0, "gencost"));
      if (model != 2)
        throw ValidationError("gencost: only polynomial model 2 supported");
      const int ncost = static_cast<int>(detail::col(c, 3, "gencost"));
      if (ncost < 1 || ncost > 3)
        throw ValidationError("gencost: polynomial degree above 2 unsupported");
      double coeff[3] = {0.0, 0.0, 0.0};  // c2, c1, c0 on MW basis
      for (int k = 0; k < ncost; ++k)
        coeff[3 - ncost + k] = detail::col(c, static_cast<std::size_t>(4 + k), "gencost");
      g.cost_c2 = coeff[0] * base * base;
      g.cost_c1 = coeff[1] * base;
      g.cost_c0 = coeff[2];
    }
    net.generators.push_back(g);
    net.embedded_dispatch.gen_p.push_back(detail::col(r, 1, "gen") / base);
    net.embedded_dispatch.gen_v.push_back(detail::col(r, 5, "gen"));
  }

  net.finalize();
  return net;
}

// ---------------------------------------------------------------------------
// Native format
// ---------------------------------------------------------------------------

namespace detail {

class TokenReader {
 public:
  explicit TokenReader(const std::string& line, int line_no)
      : ss_(line), line_no_(line_no) {}
  bool next_key(std::string& key) { return static_cast<bool>(ss_ >> key); }
  std::string expect_word() {
    std::string w;
    if (!(ss_ >> w)) fail("unexpected end of record");
    return w;
  }
  double expect_number() {
    double v = 0.0;
    if (!(ss_ >> v)) fail("expected a number");
    return v;
  }
  int expect_int() { return static_cast<int>(expect_number()); }
  void expect_keyword(const std::string& kw) {
    const std::string w = expect_word();
    if (w != kw) fail("expected '" + kw + "', got '" + w + "'");
  }
  [[noreturn]] void fail(const std::string& msg) const {
    throw ValidationError("native case line " + std::to_string(line_no_) + ": " + msg);
  }

 private:
  std::istringstream ss_;
  int line_no_;
};

}  // namespace detail

inline Network parse_native(const std::string& text, const ParseOptions& opt = {}) {
  Network net;
  std::istringstream in(text);
  std::string raw;
  int line_no = 0;
  bool saw_base = false;
  std::vector<std::pair<int, std::pair<double, double>>> dispatch_rows;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::size_t hash = raw.find('#');
    if (hash != std::string::npos) raw.erase(hash);
    detail::TokenReader tr(raw, line_no);
    std::string kind;
    if (!tr.next_key(kind)) continue;
    if (kind == "base_mva") {
      net.base_mva = tr.expect_number();
      saw_base = true;
    } else if (kind == "bus") {
      Bus b;
      b.id = tr.expect_int();
      tr.expect_keyword("vmin");
      b.v_min = tr.expect_number();
      tr.expect_keyword("vmax");
      b.v_max = tr.expect_number();
      tr.expect_keyword("pd");
      b.p_d = tr.expect_number() * opt.load_scale;
      tr.expect_keyword("qd");
      b.q_d = tr.expect_number() * opt.load_scale;
      tr.expect_keyword("bsh");
      const double bsh = tr.expect_number();
      b.b_shunt = opt.zero_shunts ? 0.0 : bsh;
      tr.expect_keyword("slack");
      b.is_slack = tr.expect_int() != 0;
      net.buses.push_back(b);
    } else if (kind == "line") {
      Line l;
      l.id = tr.expect_int();
      tr.expect_keyword("from");
      l.from_bus = tr.expect_int();
      tr.expect_keyword("to");
      l.to_bus = tr.expect_int();
      tr.expect_keyword("y");
      l.susceptance_mag = tr.expect_number();
      tr.expect_keyword("ilim");
      l.i_lim = tr.expect_number();
      tr.expect_keyword("itrip");
      l.i_trip = tr.expect_number();
      if (opt.itrip_factor) l.i_trip = *opt.itrip_factor * l.i_lim;
      net.lines.push_back(l);
    } else if (kind == "gen") {
      Generator g;
      g.id = tr.expect_int();
      tr.expect_keyword("bus");
      g.bus = tr.expect_int();
      tr.expect_keyword("pmin");
      g.p_min = tr.expect_number();
      tr.expect_keyword("pmax");
      g.p_max = tr.expect_number();
      tr.expect_keyword("qmin");
      g.q_min = tr.expect_number();
      tr.expect_keyword("qmax");
      g.q_max = tr.expect_number();
      tr.expect_keyword("cost");
      g.cost_c2 = tr.expect_number();
      g.cost_c1 = tr.expect_number();
      g.cost_c0 = tr.expect_number();
      tr.expect_keyword("mass");
      g.mass = tr.expect_number();
      net.generators.push_back(g);
    } else if (kind == "dispatch") {
      tr.expect_keyword("gen");
      const int gid = tr.expect_int();
      tr.expect_keyword("p");
      const double p = tr.expect_number();
      tr.expect_keyword("v");
      const double v = tr.expect_number();
      dispatch_rows.push_back({gid, {p, v}});
    } else {
      tr.fail("unknown record kind '" + kind + "'");
    }
  }
  if (!saw_base) throw ValidationError("native case: missing base_mva");
  net.finalize();
  if (!dispatch_rows.empty()) {
    net.embedded_dispatch.present = true;
    net.embedded_dispatch.gen_p.assign(net.generators.size(), 0.0);
    net.embedded_dispatch.gen_v.assign(net.generators.size(), 1.0);
    for (const auto& [gid, pv] : dispatch_rows) {
      bool found = false;
      for (std::size_t g = 0; g < net.generators.size(); ++g) {
        if (net.generators[g].id == gid) {
          net.embedded_dispatch.gen_p[g] = pv.first;
          net.embedded_dispatch.gen_v[g] = pv.second;
          found = true;
        }
      }
      if (!found)
        throw ValidationError("dispatch references unknown generator " + std::to_string(gid));
    }
  }
  return net;
}

inline std::string serialize_native(const Network& net) {
  std::ostringstream out;
  out << "# lossless network, native format\n";
  out << "base_mva " << num_str(net.base_mva) << "\n";
  for (const Bus& b : net.buses) {
    out << "bus " << b.id << " vmin " << num_str(b.v_min) << " vmax "
        << num_str(b.v_max) << " pd " << num_str(b.p_d) << " qd "
        << num_str(b.q_d) << " bsh " << num_str(b.b_shunt) << " slack "
        << (b.is_slack ? 1 : 0) << "\n";
  }
  for (const Line& l : net.lines) {
    out << "line " << l.id << " from " << l.from_bus << " to " << l.to_bus
        << " y " << num_str(l.susceptance_mag) << " ilim " << num_str(l.i_lim)
        << " itrip " << num_str(l.i_trip) << "\n";
  }
  for (const Generator& g : net.generators) {
    out << "gen " << g.id << " bus " << g.bus << " pmin " << num_str(g.p_min)
        << " pmax " << num_str(g.p_max) << " qmin " << num_str(g.q_min)
        << " qmax " << num_str(g.q_max) << " cost " << num_str(g.cost_c2)
        << " " << num_str(g.cost_c1) << " " << num_str(g.cost_c0) << " mass "
        << num_str(g.mass) << "\n";
  }
  if (net.embedded_dispatch.present) {
    for (std::size_t g = 0; g < net.generators.size(); ++g) {
      out << "dispatch gen " << net.generators[g].id << " p "
          << num_str(net.embedded_dispatch.gen_p[g]) << " v "
          << num_str(net.embedded_dispatch.gen_v[g]) << "\n";
    }
  }
  return out.str();
}

inline Network parse_case_text(const std::string& text, const ParseOptions& opt = {}) {
  if (text.find("mpc.") != std::string::npos) return parse_matpower(text, opt);
  return parse_native(text, opt);
}

inline Network parse_case_file(const std::string& path, const ParseOptions& opt = {}) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open case file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_case_text(ss.str(), opt);
}

}  // namespace fpopf
