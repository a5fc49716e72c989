#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "estimation.hpp"
#include "gnep.hpp"
#include "irl.hpp"
#include "model.hpp"

namespace mfgirl {

namespace detail {

inline void format_double(std::string& out, double v) {
  if (!std::isfinite(v)) {
    out += "null";
    return;
  }
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.11e", v == 0.0 ? 0.0 : v);  // folds -0 into 0
  out += buf;
}

inline void dump_into(std::string& out, const json& j, int indent, int depth) {
  const auto newline = [&](int d) {
    out += '\n';
    out.append(std::size_t(indent * d), ' ');
  };
  switch (j.type()) {
    case json::value_t::object: {
      if (j.empty()) {
        out += "{}";
        return;
      }
      out += '{';
      bool first = true;
      for (auto it = j.begin(); it != j.end(); ++it) {
        if (!first) out += ',';
        first = false;
        newline(depth + 1);
        out += json(it.key()).dump();
        out += ": ";
        dump_into(out, it.value(), indent, depth + 1);
      }
      newline(depth);
      out += '}';
      return;
    }
    case json::value_t::array: {
      if (j.empty()) {
        out += "[]";
        return;
      }
      // numeric rows stay on one line
      bool flat = true;
      for (const auto& e : j)
        if (e.is_structured()) flat = false;
      out += '[';
      bool first = true;
      for (const auto& e : j) {
        if (!first) out += flat ? ", " : ",";
        first = false;
        if (!flat) newline(depth + 1);
        dump_into(out, e, indent, depth + 1);
      }
      if (!flat) newline(depth);
      out += ']';
      return;
    }
    case json::value_t::number_float:
      format_double(out, j.get<double>());
      return;
    default:
      out += j.dump();
  }
}

}  // namespace detail

/**
 * Deterministic JSON text: keys sorted, floats as %.11e (12 significant
 * digits), two-space indent, trailing newline.
 */
inline std::string dump_stable(const json& j) {
  std::string out;
  detail::dump_into(out, j, 2, 0);
  out += '\n';
  return out;
}

inline json to_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

inline json to_json(const Matrix& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Vector vector_from_json(const json& j, const char* name) {
  if (!j.is_array()) throw ValidationError(std::string(name) + " must be an array of numbers");
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw ValidationError(std::string(name) + " has a non-numeric entry");
    v(Eigen::Index(i)) = j[i].get<double>();
  }
  return v;
}

inline Matrix matrix_from_json(const json& j, const char* name) {
  if (!j.is_array() || j.empty() || !j[0].is_array())
    throw ValidationError(std::string(name) + " must be a nested array [row][col]");
  const std::size_t cols = j[0].size();
  Matrix m(Eigen::Index(j.size()), Eigen::Index(cols));
  for (std::size_t r = 0; r < j.size(); ++r) {
    if (!j[r].is_array() || j[r].size() != cols)
      throw ValidationError(std::string(name) + " rows have unequal lengths");
    for (std::size_t c = 0; c < cols; ++c) {
      if (!j[r][c].is_number())
        throw ValidationError(std::string(name) + " has a non-numeric entry");
      m(Eigen::Index(r), Eigen::Index(c)) = j[r][c].get<double>();
    }
  }
  return m;
}

// ---- result documents ------------------------------------------------------

inline json equilibrium_to_json(const Equilibrium& e, const KktReport& rep) {
  json j;
  j["mean_field"] = to_json(e.mean_field);
  j["policy"] = to_json(e.policy);
  j["occupation"] = to_json(e.occupation);
  j["optimality_gap"] = e.optimality_gap;
  j["invariance_residual"] = e.invariance_residual;
  j["iterations"] = rep.iterations;
  j["h_norm_final"] = rep.h_norm_history.empty() ? 0.0 : rep.h_norm_history.back();
  j["converged"] = rep.converged;
  j["status"] = rep.status;
  return j;
}

/// Reads mean_field, policy and (optionally) occupation from an equilibrium document.
inline Equilibrium equilibrium_from_json(const json& j) {
  if (!j.is_object() || !j.contains("mean_field") || !j.contains("policy"))
    throw ValidationError("equilibrium document needs keys mean_field and policy");
  Equilibrium e;
  e.mean_field = vector_from_json(j["mean_field"], "mean_field");
  e.policy = matrix_from_json(j["policy"], "policy");
  if (j.contains("occupation")) e.occupation = matrix_from_json(j["occupation"], "occupation");
  if (e.policy.rows() != e.mean_field.size())
    throw ValidationError("policy rows differ from mean_field length");
  return e;
}

inline json irl_to_json(const IrlResult& r, const IrlResiduals& res) {
  json j;
  j["dual"] = {{"theta", to_json(r.dual.theta)},
               {"lambda", to_json(r.dual.lambda)},
               {"xi", to_json(r.dual.xi)}};
  j["occupation"] = to_json(r.occupation);
  j["policy"] = to_json(r.policy);
  j["residuals"] = {{"feat", res.feat}, {"flow", res.flow}, {"marg", res.marg}, {"pos", res.pos}};
  j["iterations"] = r.iterations;
  j["g_final"] = r.g_final;
  j["converged"] = r.converged;
  j["step"] = r.step;
  j["step_above_bound"] = r.step_above_bound;
  return j;
}

// ---- files -----------------------------------------------------------------

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write file: " + path);
  out << text;
  if (!out) throw ValidationError("write failed: " + path);
}

inline json parse_json(const std::string& text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(what + " is not valid JSON: " + e.what());
  }
}

/// Inverse of write_trajectories_csv. Rows of one trajectory must be consecutive in t.
inline std::vector<Trajectory> read_trajectories_csv(std::istream& in, int n_states,
                                                     int n_actions) {
  std::string line;
  if (!std::getline(in, line)) throw EmptyData();
  if (line.rfind("trajectory_id,t,state,action", 0) != 0)
    throw ParseError("trajectory CSV must start with header trajectory_id,t,state,action");
  std::vector<Trajectory> out;
  long lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    long id, t, x, a;
    char c1, c2, c3;
    std::istringstream ss(line);
    if (!(ss >> id >> c1 >> t >> c2 >> x >> c3 >> a) || c1 != ',' || c2 != ',' || c3 != ',')
      throw ParseError("malformed trajectory CSV line " + std::to_string(lineno));
    if (x < 0 || x >= n_states || a < 0 || a >= n_actions)
      throw ValidationError("state or action out of range on CSV line " + std::to_string(lineno));
    if (id < 0) throw ValidationError("negative trajectory id on line " + std::to_string(lineno));
    if (std::size_t(id) >= out.size()) out.resize(std::size_t(id) + 1);
    auto& steps = out[std::size_t(id)].steps;
    if (long(steps.size()) != t)
      throw ValidationError("time index out of order on CSV line " + std::to_string(lineno));
    steps.push_back({int(x), int(a)});
  }
  if (out.empty()) throw EmptyData();
  return out;
}

}  // namespace mfgirl
