#pragma once

// Serialization: canonical JSON tables, fit/test/bootstrap reports, expfam
// datasets as CSV, and aligned text reports. NaN is written as JSON null and
// read back as NaN.

#include <string>

#include "bcmar/expfam.hpp"
#include "bcmar/inference.hpp"
#include "bcmar/table.hpp"

namespace bcmar::io {

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& content);

// {"J":2,"K":2,"complete":[[..],[..]],"z1_only":[..],"z2_only":[..],"neither":n}
MarginTable table_from_json(const std::string& text);
std::string table_to_json(const MarginTable& table);

std::string report_to_json(const FitReport& rep);
FitReport report_from_json(const std::string& text);

// Simulation truth: {"theta": [[..]], "mechanism": {...}}. A fit report
// is accepted as well.
struct TableTruth {
  CellProbs theta;
  Mechanism mech;
};
TableTruth truth_from_json(const std::string& text);

std::string lrt_to_json(const LrtResult& res);
std::string bootstrap_to_json(const BootstrapResult& res);

/// Header `z1,z2` or `z1,z2_1,..,z2_V`; empty fields are missing; z1 is
/// 1-based. J defaults to the largest label seen.
ExpFamDataset dataset_from_csv(const std::string& text, std::size_t J = 0);
std::string dataset_to_csv(const ExpFamDataset& data);

// {"family": {"name": "normal", "variance": 1}, "theta1": [..],
//  "means": [[..]] or "theta2": [[..]], "mechanism": {...}}
ExpFamModel expfam_model_from_json(const std::string& text);
std::string expfam_model_to_json(const ExpFamModel& model);
std::string expfam_fit_to_json(const ExpFamFit& fit);

std::string report_to_text(const FitReport& rep);
std::string lrt_to_text(const LrtResult& res);
std::string bootstrap_to_text(const BootstrapResult& res);
std::string expfam_fit_to_text(const ExpFamFit& fit);

}  // namespace bcmar::io
