#include "bcmar/io.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include <json.hpp>

namespace bcmar::io {

using Json = nlohmann::ordered_json;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

[[noreturn]] void parse_error(const std::string& what) { throw Error(ErrorCode::Parse, what); }

Json num(double x) { return std::isfinite(x) ? Json(x) : Json(nullptr); }

Json nums(const std::vector<double>& v) {
  Json a = Json::array();
  for (double x : v) a.push_back(num(x));
  return a;
}

double get_num(const Json& j) {
  if (j.is_null()) return kNaN;
  if (!j.is_number()) parse_error("expected a number, got " + j.dump());
  return j.get<double>();
}

std::vector<double> get_nums(const Json& j) {
  if (!j.is_array()) parse_error("expected an array, got " + j.dump());
  std::vector<double> out;
  for (const auto& x : j) out.push_back(get_num(x));
  return out;
}

const Json& field(const Json& j, const char* key) {
  if (!j.is_object() || !j.contains(key)) parse_error(std::string("missing field '") + key + "'");
  return j.at(key);
}

Count get_count(const Json& j) {
  if (!j.is_number_integer()) parse_error("expected an integer count, got " + j.dump());
  return j.get<Count>();
}

std::vector<Count> get_counts(const Json& j) {
  if (!j.is_array()) parse_error("expected an array of counts");
  std::vector<Count> out;
  for (const auto& x : j) out.push_back(get_count(x));
  return out;
}

Json parse(const std::string& text) {
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    parse_error(std::string("malformed JSON: ") + e.what());
  }
}

template <class F>
auto guarded(F&& f) {
  try {
    return f();
  } catch (const Json::exception& e) {
    parse_error(e.what());
  }
}

std::string dump(const Json& j) { return j.dump(2) + "\n"; }

Json theta_json(const CellProbs& theta) {
  Json rows = Json::array();
  for (std::size_t j = 0; j < theta.J; ++j) {
    Json r = Json::array();
    for (std::size_t k = 0; k < theta.K; ++k) r.push_back(num(theta(j, k)));
    rows.push_back(r);
  }
  return rows;
}

CellProbs theta_from(const Json& rows) {
  if (!rows.is_array() || rows.empty()) parse_error("theta must be a non-empty array of rows");
  const std::size_t J = rows.size();
  const std::size_t K = rows.front().size();
  CellProbs theta(J, K);
  for (std::size_t j = 0; j < J; ++j) {
    const auto r = get_nums(rows[j]);
    if (r.size() != K) parse_error("theta rows differ in length");
    for (std::size_t k = 0; k < K; ++k) theta(j, k) = r[k];
  }
  return theta;
}

Json mechanism_json(const Mechanism& m) {
  return Json{{"variant", to_string(m.variant)}, {"phi", num(m.phi)}, {"phi0", nums(m.phi0)},
              {"phi1", nums(m.phi1)}};
}

Mechanism mechanism_from(const Json& j) {
  Mechanism m;
  m.variant = model_from_string(field(j, "variant").get<std::string>());
  m.phi = get_num(field(j, "phi"));
  m.phi0 = get_nums(field(j, "phi0"));
  m.phi1 = get_nums(field(j, "phi1"));
  check_mechanism(m);
  return m;
}

Json named_json(const std::vector<NamedValue>& v) {
  Json a = Json::array();
  for (const auto& nv : v) a.push_back(Json{{"name", nv.name}, {"value", num(nv.value)}});
  return a;
}

std::vector<NamedValue> named_from(const Json& a) {
  std::vector<NamedValue> out;
  for (const auto& x : a) out.push_back({field(x, "name").get<std::string>(), get_num(field(x, "value"))});
  return out;
}

Json trace_json(const std::vector<TracePoint>& trace) {
  Json a = Json::array();
  for (const auto& t : trace) a.push_back(Json::array({t.iteration, num(t.loglik)}));
  return a;
}

std::vector<TracePoint> trace_from(const Json& a) {
  std::vector<TracePoint> out;
  for (const auto& x : a) out.push_back({x.at(0).get<int>(), get_num(x.at(1))});
  return out;
}

std::string fixed(double x, int prec = 4) {
  if (std::isnan(x)) return "NA";
  std::ostringstream os;
  os << std::fixed << std::setprecision(prec) << x;
  return os.str();
}

std::string with_se(double x, const std::vector<NamedValue>* se, const std::string& name) {
  std::string s = fixed(x);
  if (!se) return s;
  for (const auto& nv : *se)
    if (nv.name == name) return s + " (" + fixed(nv.value) + ")";
  return s;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r' && c != ' ' && c != '\t') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

double parse_real(const std::string& s, std::size_t line) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != s.size() || used == 0)
    parse_error("line " + std::to_string(line) + ": '" + s + "' is not a number");
  return v;
}

std::string format_real(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

}  // namespace

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Parse, "cannot open '" + path + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::InvalidArgument, "cannot write '" + path + "'");
  out << content;
}

MarginTable table_from_json(const std::string& text) {
  const Json j = parse(text);
  return guarded([&] {
    const auto J = static_cast<std::size_t>(get_count(field(j, "J")));
    const auto K = static_cast<std::size_t>(get_count(field(j, "K")));
    const Json& rows = field(j, "complete");
    if (!rows.is_array() || rows.size() != J) parse_error("'complete' must have J rows");
    std::vector<std::vector<Count>> cells;
    for (const auto& r : rows) {
      cells.push_back(get_counts(r));
      if (cells.back().size() != K) parse_error("'complete' rows must have K entries");
    }
    MarginTable t = MarginTable::from_rows(cells, get_counts(field(j, "z1_only")),
                                           get_counts(field(j, "z2_only")), get_count(field(j, "neither")));
    validate(t);
    return t;
  });
}

std::string table_to_json(const MarginTable& t) {
  Json rows = Json::array();
  for (std::size_t j = 0; j < t.J; ++j) {
    Json r = Json::array();
    for (std::size_t k = 0; k < t.K; ++k) r.push_back(t.cell(j, k));
    rows.push_back(r);
  }
  return dump(Json{{"J", t.J},
                   {"K", t.K},
                   {"complete", rows},
                   {"z1_only", t.z1_only},
                   {"z2_only", t.z2_only},
                   {"neither", t.neither}});
}

std::string report_to_json(const FitReport& rep) {
  Json j{{"model", to_string(rep.model)},
         {"estimator", to_string(rep.estimator)},
         {"feasibility", to_string(rep.feasibility)},
         {"full_ml", rep.full_ml},
         {"converged", rep.converged},
         {"iterations", rep.iterations},
         {"loglik", num(rep.loglik)},
         {"J", rep.theta.J},
         {"K", rep.theta.K},
         {"theta", theta_json(rep.theta)},
         {"mechanism", rep.mechanism ? mechanism_json(*rep.mechanism) : Json(nullptr)},
         {"phi1_unconstrained", rep.phi1_unconstrained ? nums(*rep.phi1_unconstrained) : Json(nullptr)},
         {"solution_dim", rep.solution_dim},
         {"se", rep.se ? named_json(*rep.se) : Json(nullptr)},
         {"warnings", rep.warnings},
         {"trace", trace_json(rep.trace)}};
  return dump(j);
}

FitReport report_from_json(const std::string& text) {
  const Json j = parse(text);
  return guarded([&] {
    FitReport r;
    r.model = model_from_string(field(j, "model").get<std::string>());
    r.estimator = estimator_from_string(field(j, "estimator").get<std::string>());
    r.feasibility = feasibility_from_string(field(j, "feasibility").get<std::string>());
    r.full_ml = field(j, "full_ml").get<bool>();
    r.converged = field(j, "converged").get<bool>();
    r.iterations = field(j, "iterations").get<int>();
    r.loglik = get_num(field(j, "loglik"));
    r.theta = theta_from(field(j, "theta"));
    if (const Json& m = field(j, "mechanism"); !m.is_null()) r.mechanism = mechanism_from(m);
    if (const Json& p = field(j, "phi1_unconstrained"); !p.is_null()) r.phi1_unconstrained = get_nums(p);
    r.solution_dim = field(j, "solution_dim").get<int>();
    if (const Json& s = field(j, "se"); !s.is_null()) r.se = named_from(s);
    r.warnings = field(j, "warnings").get<std::vector<std::string>>();
    r.trace = trace_from(field(j, "trace"));
    return r;
  });
}

TableTruth truth_from_json(const std::string& text) {
  const Json j = parse(text);
  return guarded([&] {
    TableTruth t{theta_from(field(j, "theta")), mechanism_from(field(j, "mechanism"))};
    check_probabilities(t.theta);
    if (t.mech.J() != t.theta.J) parse_error("mechanism and theta disagree on J");
    return t;
  });
}

std::string lrt_to_json(const LrtResult& res) {
  return dump(Json{{"full", to_string(res.full)},
                   {"restricted", to_string(res.restricted)},
                   {"loglik_full", num(res.loglik_full)},
                   {"loglik_restricted", num(res.loglik_restricted)},
                   {"stat", num(res.stat)},
                   {"df", res.df},
                   {"p_value", num(res.p_value)}});
}

std::string bootstrap_to_json(const BootstrapResult& res) {
  Json params = Json::array();
  for (std::size_t i = 0; i < res.estimate.size(); ++i)
    params.push_back(Json{{"name", res.estimate[i].name},
                          {"estimate", num(res.estimate[i].value)},
                          {"se", num(res.se[i].value)},
                          {"contributing", res.contributing[i]}});
  return dump(Json{{"model", to_string(res.model)},
                   {"replicates", res.replicates},
                   {"failures", res.failures},
                   {"seed", res.seed},
                   {"infeasible_fraction", num(res.infeasible_fraction)},
                   {"parameters", params},
                   {"warnings", res.warnings}});
}

ExpFamDataset dataset_from_csv(const std::string& text, std::size_t J) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  std::vector<std::string> header;
  while (header.empty() && std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") != std::string::npos) header = split_csv_line(line);
  }
  if (header.empty() || header[0] != "z1") parse_error("CSV header must start with 'z1'");
  const std::size_t V = header.size() - 1;
  if (V == 0) parse_error("CSV needs a z2 column");
  if (V == 1 && header[1] != "z2" && header[1] != "z2_1") parse_error("second column must be 'z2'");
  for (std::size_t v = 1; v < V + 1 && V > 1; ++v)
    if (header[v] != "z2_" + std::to_string(v)) parse_error("expected column 'z2_" + std::to_string(v) + "'");

  ExpFamDataset data;
  int max_label = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto f = split_csv_line(line);
    if (f.size() != V + 1) parse_error("line " + std::to_string(lineno) + ": wrong number of fields");
    ExpFamCase c;
    if (!f[0].empty()) {
      const double label = parse_real(f[0], lineno);
      if (label != std::floor(label) || label < 1)
        parse_error("line " + std::to_string(lineno) + ": z1 must be a positive integer");
      c.z1 = static_cast<int>(label) - 1;
      max_label = std::max(max_label, static_cast<int>(label));
    }
    std::size_t present = 0;
    Vec z(V);
    for (std::size_t v = 0; v < V; ++v)
      if (!f[v + 1].empty()) {
        z[v] = parse_real(f[v + 1], lineno);
        ++present;
      }
    if (present == V) c.z2 = std::move(z);
    else if (present != 0) parse_error("line " + std::to_string(lineno) + ": partially observed z2");
    data.cases.push_back(std::move(c));
  }
  if (J != 0 && static_cast<std::size_t>(max_label) > J)
    parse_error("z1 label " + std::to_string(max_label) + " exceeds J=" + std::to_string(J));
  data.J = J != 0 ? J : static_cast<std::size_t>(max_label);
  return data;
}

std::string dataset_to_csv(const ExpFamDataset& data) {
  std::size_t V = 1;
  for (const auto& c : data.cases)
    if (c.z2) {
      V = c.z2->size();
      break;
    }
  std::ostringstream os;
  os << "z1";
  if (V == 1) os << ",z2";
  else
    for (std::size_t v = 1; v <= V; ++v) os << ",z2_" << v;
  os << "\n";
  for (const auto& c : data.cases) {
    if (c.z1) os << (*c.z1 + 1);
    for (std::size_t v = 0; v < V; ++v) {
      os << ",";
      if (c.z2) os << format_real((*c.z2)[v]);
    }
    os << "\n";
  }
  return os.str();
}

namespace {

Json expfam_model_json(const ExpFamModel& m) {
  Json fam{{"name", m.family->name()}};
  for (const auto& d : m.family->descriptor()) fam[d.name] = num(d.value);
  Json theta2 = Json::array(), means = Json::array();
  for (const auto& eta : m.theta2) theta2.push_back(nums(eta));
  for (const auto& psi : m.means()) means.push_back(nums(psi));
  return Json{{"family", fam},
              {"theta1", nums(m.theta1)},
              {"theta2", theta2},
              {"means", means},
              {"mechanism", mechanism_json(m.mech)}};
}

}  // namespace

ExpFamModel expfam_model_from_json(const std::string& text) {
  const Json j = parse(text);
  return guarded([&] {
    const Json& fam = field(j, "family");
    std::vector<NamedValue> params;
    for (const auto& [key, value] : fam.items())
      if (key != "name") params.push_back({key, get_num(value)});
    ExpFamModel m;
    m.family = family_from_descriptor(field(fam, "name").get<std::string>(), params);
    m.theta1 = get_nums(field(j, "theta1"));
    if (j.contains("theta2")) {
      for (const auto& eta : j.at("theta2")) m.theta2.push_back(get_nums(eta));
    } else {
      for (const auto& psi : field(j, "means")) m.theta2.push_back(m.family->natural_from_mean(get_nums(psi)));
    }
    m.mech = mechanism_from(field(j, "mechanism"));
    check_model(m);
    return m;
  });
}

std::string expfam_model_to_json(const ExpFamModel& model) { return dump(expfam_model_json(model)); }

std::string expfam_fit_to_json(const ExpFamFit& fit) {
  return dump(Json{{"estimator", to_string(fit.estimator)},
                   {"converged", fit.converged},
                   {"iterations", fit.iterations},
                   {"loglik", num(fit.loglik)},
                   {"model", expfam_model_json(fit.model)},
                   {"warnings", fit.warnings},
                   {"trace", trace_json(fit.trace)}});
}

std::string report_to_text(const FitReport& rep) {
  std::ostringstream os;
  const std::vector<NamedValue>* se = rep.se ? &*rep.se : nullptr;
  os << "model        " << to_string(rep.model) << "\n"
     << "estimator    " << to_string(rep.estimator)
     << (rep.estimator == Estimator::ClosedForm ? " (noniterative)" : "") << "\n"
     << "feasibility  " << to_string(rep.feasibility) << "\n"
     << "loglik       " << fixed(rep.loglik, 3) << "\n";
  if (rep.estimator == Estimator::EM)
    os << "iterations   " << rep.iterations << (rep.converged ? " (converged)" : " (not converged)") << "\n";

  os << "\nParameters of interest: theta[j,k] = P(Z1=j, Z2=k)\n";
  os << std::setw(8) << "";
  for (std::size_t k = 0; k < rep.theta.K; ++k) os << std::setw(20) << ("Z2=" + std::to_string(k + 1));
  os << "\n";
  for (std::size_t j = 0; j < rep.theta.J; ++j) {
    os << std::setw(8) << ("Z1=" + std::to_string(j + 1));
    for (std::size_t k = 0; k < rep.theta.K; ++k)
      os << std::setw(20)
         << with_se(rep.theta(j, k), se, "theta[" + std::to_string(j + 1) + "," + std::to_string(k + 1) + "]");
    os << "\n";
  }

  if (rep.mechanism) {
    const auto& m = *rep.mechanism;
    os << "\nNuisance parameters (missingness)\n";
    os << "  phi          " << with_se(m.phi, se, "phi") << "\n";
    for (std::size_t j = 0; j < m.J(); ++j) {
      const std::string idx = "[" + std::to_string(j + 1) + "]";
      if (m.variant == Model::RestrictedBCMAR) {
        os << "  phi_j" << std::left << std::setw(8) << idx << std::right << with_se(m.phi0[j], se, "phi_j" + idx)
           << "\n";
        continue;
      }
      os << "  phi0" << std::left << std::setw(9) << idx << std::right << with_se(m.phi0[j], se, "phi0" + idx);
      if (m.variant == Model::UnrestrictedBCMAR)
        os << "    phi1" << idx << " " << with_se(m.phi1[j], se, "phi1" + idx);
      os << "\n";
    }
    if (m.variant == Model::RestrictedMAR) os << "  phi1         " << with_se(m.phi1_common(), se, "phi1") << "\n";
  }
  if (rep.phi1_unconstrained) {
    os << "\nUnconstrained phi1 solve (";
    for (std::size_t j = 0; j < rep.phi1_unconstrained->size(); ++j)
      os << (j ? ", " : "") << fixed((*rep.phi1_unconstrained)[j]);
    os << "), solution dimension " << rep.solution_dim << "\n";
  }
  if (!rep.warnings.empty()) {
    os << "\nNotes\n";
    for (const auto& w : rep.warnings) os << "  - " << w << "\n";
  }
  return os.str();
}

std::string lrt_to_text(const LrtResult& res) {
  std::ostringstream os;
  os << "full         " << to_string(res.full) << "  loglik " << fixed(res.loglik_full, 3) << "\n"
     << "restricted   " << to_string(res.restricted) << "  loglik " << fixed(res.loglik_restricted, 3) << "\n"
     << "LRT          " << fixed(res.stat, 3) << " on " << res.df << " df, p = " << std::setprecision(4)
     << res.p_value << "\n";
  return os.str();
}

std::string bootstrap_to_text(const BootstrapResult& res) {
  std::ostringstream os;
  os << "model        " << to_string(res.model) << "\n"
     << "replicates   " << res.replicates << " (" << res.failures << " failed), seed " << res.seed << "\n"
     << "EM fallback  " << fixed(100.0 * res.infeasible_fraction, 1) << "% of replicates\n\n"
     << std::left << std::setw(16) << "parameter" << std::right << std::setw(12) << "estimate" << std::setw(12)
     << "boot SE" << std::setw(8) << "n" << "\n";
  for (std::size_t i = 0; i < res.estimate.size(); ++i)
    os << std::left << std::setw(16) << res.estimate[i].name << std::right << std::setw(12)
       << fixed(res.estimate[i].value) << std::setw(12) << fixed(res.se[i].value) << std::setw(8)
       << res.contributing[i] << "\n";
  for (const auto& w : res.warnings) os << "note: " << w << "\n";
  return os.str();
}

std::string expfam_fit_to_text(const ExpFamFit& fit) {
  std::ostringstream os;
  const auto& m = fit.model;
  os << "family       " << m.family->name();
  for (const auto& d : m.family->descriptor()) os << " (" << d.name << " " << d.value << ")";
  os << "\nestimator    " << to_string(fit.estimator) << "\n"
     << "loglik       " << fixed(fit.loglik, 3) << "\n";
  if (fit.estimator == Estimator::EM)
    os << "iterations   " << fit.iterations << (fit.converged ? " (converged)" : " (not converged)") << "\n";
  os << "\nclass    theta1      mean of t(z2)           phi0      phi1\n";
  const auto means = m.means();
  for (std::size_t j = 0; j < m.J(); ++j) {
    std::string psi;
    for (std::size_t v = 0; v < means[j].size(); ++v) psi += (v ? ", " : "") + fixed(means[j][v]);
    os << std::setw(5) << j + 1 << std::setw(10) << fixed(m.theta1[j]) << "      " << std::left << std::setw(24)
       << psi << std::right << std::setw(8) << fixed(m.mech.phi0[j]) << std::setw(10) << fixed(m.mech.phi1[j])
       << "\n";
  }
  os << "phi " << fixed(m.mech.phi) << "\n";
  for (const auto& w : fit.warnings) os << "note: " << w << "\n";
  return os.str();
}

}  // namespace bcmar::io
