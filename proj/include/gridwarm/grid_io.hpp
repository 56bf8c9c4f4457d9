#pragma once

#include "gridwarm/grid.hpp"

#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace gridwarm {

/// Reads the bus, gen, branch and baseMVA tables of a MATPOWER case file.
/// MW/MVAr quantities are converted to per-unit and angles to radians. Other
/// tables (gencost, dcline, ...) are skipped; a note is appended to `warnings`.
GridCase parse_matpower(std::string_view text, std::vector<std::string>* warnings = nullptr);

GridCase parse_native(std::string_view text);
std::string serialize_native(const GridCase& grid);

nlohmann::ordered_json to_json(const GridCase& grid);
GridCase grid_from_json(const nlohmann::json& doc, const std::string& path = "$");

/// Dispatches on file extension: `.m` is MATPOWER, anything else native JSON.
GridCase load_case_file(const std::string& path);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, std::string_view contents);

} // namespace gridwarm
