#pragma once

#include <json.hpp>

#include <fstream>
#include <string>
#include <vector>

#include "lookback/common.hpp"
#include "lookback/envelope.hpp"
#include "lookback/renewal.hpp"

namespace lookback {

inline nlohmann::json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw config_error("cannot read config file " + path);
  nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) throw config_error("config file " + path + " is not valid JSON");
  if (!j.is_object()) throw config_error("config root must be a JSON object");
  return j;
}

inline const nlohmann::json& jrequire(const nlohmann::json& j, const char* key) {
  if (!j.contains(key)) throw config_error(std::string("missing config field '") + key + "'");
  return j.at(key);
}

inline double jnum(const nlohmann::json& j, const char* key) {
  const nlohmann::json& v = jrequire(j, key);
  if (!v.is_number()) throw config_error(std::string("field '") + key + "' must be a number");
  return v.get<double>();
}

inline double jnum_or(const nlohmann::json& j, const char* key, double def) {
  if (!j.contains(key)) return def;
  return jnum(j, key);
}

inline long long jint(const nlohmann::json& j, const char* key) {
  const nlohmann::json& v = jrequire(j, key);
  if (!v.is_number_integer()) throw config_error(std::string("field '") + key + "' must be an integer");
  return v.get<long long>();
}

inline long long jint_or(const nlohmann::json& j, const char* key, long long def) {
  if (!j.contains(key)) return def;
  return jint(j, key);
}

inline std::string jstr_or(const nlohmann::json& j, const char* key, const std::string& def) {
  if (!j.contains(key)) return def;
  const nlohmann::json& v = j.at(key);
  if (!v.is_string()) throw config_error(std::string("field '") + key + "' must be a string");
  return v.get<std::string>();
}

inline std::vector<double> jvec(const nlohmann::json& j, const char* key) {
  const nlohmann::json& v = jrequire(j, key);
  if (!v.is_array()) throw config_error(std::string("field '") + key + "' must be an array");
  std::vector<double> out;
  for (const auto& e : v) {
    if (!e.is_number()) throw config_error(std::string("field '") + key + "' must hold numbers");
    out.push_back(e.get<double>());
  }
  return out;
}

inline EnvelopeParams parse_schedule(const nlohmann::json& cfg) {
  const nlohmann::json& s = jrequire(cfg, "schedule");
  if (!s.is_object()) throw config_error("'schedule' must be an object");
  try {
    return EnvelopeParams::make(jnum(s, "A"), jnum(s, "alpha"), jnum(s, "B"),
                                jnum(s, "beta"));
  } catch (const std::domain_error& e) {
    throw config_error(std::string("schedule rejected: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw config_error(std::string("schedule rejected: ") + e.what());
  }
}

inline ConstantsLedger parse_ledger(const nlohmann::json& cfg) {
  ConstantsLedger led;
  if (!cfg.contains("constants")) return led;
  const nlohmann::json& c = cfg.at("constants");
  if (!c.is_object()) throw config_error("'constants' must be an object");
  led.K = jnum_or(c, "K", led.K);
  led.C_big = jnum_or(c, "C_big", led.C_big);
  led.c_small = jnum_or(c, "c_small", led.c_small);
  try {
    led.validate();
  } catch (const std::exception& e) {
    throw config_error(std::string("constants rejected: ") + e.what());
  }
  return led;
}

inline ShapeDensity parse_shape(const nlohmann::json& cfg) {
  const nlohmann::json& s = jrequire(cfg, "shape");
  if (!s.is_object()) throw config_error("'shape' must be an object");
  std::string kind = jstr_or(s, "kind", "");
  try {
    if (kind == "uniform") return ShapeDensity::uniform();
    if (kind == "beta") return ShapeDensity::beta(jnum(s, "a"), jnum(s, "b"));
    if (kind == "table") return ShapeDensity::table(jvec(s, "grid"), jvec(s, "pdf"));
    if (kind == "lattice") return ShapeDensity::geometric_lattice(jnum(s, "q"));
  } catch (const std::invalid_argument& e) {
    throw config_error(std::string("shape rejected: ") + e.what());
  }
  throw config_error("shape kind must be uniform, beta, table, or lattice");
}

// Deterministic CSV emitter: '#' comment block, one header row, then data
// rows with doubles at 17 significant digits.  No timestamps.
class CsvWriter {
 public:
  CsvWriter(const std::string& path, const std::vector<std::string>& comments,
            const std::vector<std::string>& columns) {
    out_.open(path, std::ios::binary);
    if (!out_) throw config_error("cannot open output file " + path);
    out_ << "# lookback 0.1.0\n";
    for (const std::string& c : comments) out_ << "# " << c << "\n";
    for (std::size_t i = 0; i < columns.size(); ++i) {
      if (i) out_ << ',';
      out_ << columns[i];
    }
    if (!columns.empty()) out_ << '\n';
  }

  template <typename... Ts>
  void row(const Ts&... cells) {
    bool first = true;
    (emit(cells, first), ...);
    out_ << '\n';
  }

  std::ofstream& stream() { return out_; }

 private:
  template <typename T>
  void emit(const T& v, bool& first) {
    if (!first) out_ << ',';
    first = false;
    write_cell(v);
  }
  void write_cell(double v) { out_ << fmt17(v); }
  void write_cell(bool v) { out_ << (v ? 1 : 0); }
  void write_cell(int v) { out_ << v; }
  void write_cell(long long v) { out_ << v; }
  void write_cell(unsigned long long v) { out_ << v; }
  void write_cell(const std::string& v) { out_ << v; }
  void write_cell(const char* v) { out_ << v; }

  std::ofstream out_;
};

}  // namespace lookback
