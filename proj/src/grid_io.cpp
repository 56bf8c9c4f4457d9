#include "gridwarm/grid_io.hpp"

#include "gridwarm/error.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>

namespace gridwarm {

namespace {

constexpr double deg2rad = std::numbers::pi / 180.0;

struct Row {
    int line = 0;
    std::vector<double> values;
};

std::string_view trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string_view::npos)
        return {};
    const auto last = s.find_last_not_of(" \t\r\n");
    return s.substr(first, last - first + 1);
}

double parse_number(std::string_view tok, int line) {
    tok = trim(tok);
    if (tok == "Inf" || tok == "inf")
        return std::numeric_limits<double>::infinity();
    if (tok == "-Inf" || tok == "-inf")
        return -std::numeric_limits<double>::infinity();
    if (!tok.empty() && tok.front() == '+')
        tok.remove_prefix(1);
    double v = 0;
    auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc{} || ptr != tok.data() + tok.size())
        throw ParseError("malformed number '" + std::string(tok) + "'", line);
    return v;
}

Row parse_row(std::string_view text, int line) {
    Row row{line, {}};
    std::size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && (text[i] == ' ' || text[i] == '\t' || text[i] == ',' || text[i] == '\r'))
            ++i;
        std::size_t j = i;
        while (j < text.size() && !(text[j] == ' ' || text[j] == '\t' || text[j] == ',' || text[j] == '\r'))
            ++j;
        if (j > i)
            row.values.push_back(parse_number(text.substr(i, j - i), line));
        i = j;
    }
    return row;
}

struct MatpowerTables {
    std::optional<double> base_mva;
    int base_line = 0;
    std::map<std::string, std::vector<Row>> matrices;
    std::map<std::string, int> matrix_line;
};

// Splits the file into named numeric matrices and scalar assignments. Only
// the `name = [ ... ];` and `name = number;` shapes are understood.
MatpowerTables scan_matpower(std::string_view text, std::vector<std::string>* warnings) {
    MatpowerTables out;
    std::vector<std::string> lines;
    {
        std::string cur;
        for (char c : text) {
            if (c == '\n') {
                lines.push_back(std::move(cur));
                cur.clear();
            } else {
                cur.push_back(c);
            }
        }
        lines.push_back(std::move(cur));
    }

    std::string open_matrix;
    bool in_cell = false;
    for (std::size_t li = 0; li < lines.size(); ++li) {
        const int line_no = static_cast<int>(li) + 1;
        std::string_view line = lines[li];
        if (auto pct = line.find('%'); pct != std::string_view::npos)
            line = line.substr(0, pct);
        line = trim(line);
        if (line.empty())
            continue;

        if (in_cell) {
            if (line.find('}') != std::string_view::npos)
                in_cell = false;
            continue;
        }

        if (!open_matrix.empty()) {
            auto close = line.find(']');
            std::string_view body = close == std::string_view::npos ? line : line.substr(0, close);
            std::size_t start = 0;
            while (start <= body.size()) {
                auto semi = body.find(';', start);
                auto piece = trim(body.substr(start, semi == std::string_view::npos ? std::string_view::npos : semi - start));
                if (!piece.empty())
                    out.matrices[open_matrix].push_back(parse_row(piece, line_no));
                if (semi == std::string_view::npos)
                    break;
                start = semi + 1;
            }
            if (close != std::string_view::npos)
                open_matrix.clear();
            continue;
        }

        if (line.starts_with("function"))
            continue;

        auto eq = line.find('=');
        if (eq == std::string_view::npos)
            continue;
        std::string name(trim(line.substr(0, eq)));
        if (name.starts_with("mpc."))
            name = name.substr(4);
        auto rhs = trim(line.substr(eq + 1));

        if (rhs.starts_with("[")) {
            out.matrices[name];
            out.matrix_line[name] = line_no;
            open_matrix = name;
            // Rows may start on the same line as the opening bracket.
            std::string rest(rhs.substr(1));
            lines[li] = rest;
            --li;
            continue;
        }
        if (rhs.starts_with("{")) {
            if (rhs.find('}') == std::string_view::npos)
                in_cell = true;
            if (warnings)
                warnings->push_back("ignoring cell array '" + name + "'");
            continue;
        }
        if (name == "baseMVA") {
            if (rhs.ends_with(";"))
                rhs.remove_suffix(1);
            out.base_mva = parse_number(rhs, line_no);
            out.base_line = line_no;
        }
    }
    if (!open_matrix.empty())
        throw ParseError("unterminated matrix '" + open_matrix + "'", static_cast<int>(lines.size()));
    return out;
}

const std::vector<Row>& require_table(const MatpowerTables& t, const char* name) {
    auto it = t.matrices.find(name);
    if (it == t.matrices.end())
        throw ParseError(std::string("missing '") + name + "' table", 0);
    return it->second;
}

void require_columns(const Row& row, std::size_t n, const char* table) {
    if (row.values.size() < n)
        throw ParseError(std::string(table) + " row has " + std::to_string(row.values.size()) + " columns, expected at least " +
                             std::to_string(n),
                         row.line);
}

int as_id(double v, int line) {
    if (v != std::floor(v) || std::abs(v) > 2e9)
        throw ParseError("expected an integer bus id", line);
    return static_cast<int>(v);
}

} // namespace

GridCase parse_matpower(std::string_view text, std::vector<std::string>* warnings) {
    const auto tables = scan_matpower(text, warnings);
    if (!tables.base_mva)
        throw ParseError("missing baseMVA", 0);

    GridCase grid;
    grid.base_mva = *tables.base_mva;
    if (!(grid.base_mva > 0))
        throw ParseError("baseMVA must be positive", tables.base_line);
    const double base = grid.base_mva;

    for (const auto& [name, rows] : tables.matrices) {
        if (name != "bus" && name != "gen" && name != "branch" && warnings)
            warnings->push_back("ignoring table '" + name + "'");
    }

    for (const auto& row : require_table(tables, "bus")) {
        require_columns(row, 9, "bus");
        const auto& v = row.values;
        Bus b;
        b.id = as_id(v[0], row.line);
        switch (static_cast<int>(v[1])) {
        case 1:
            b.kind = BusKind::pq;
            break;
        case 2:
            b.kind = BusKind::pv;
            break;
        case 3:
            b.kind = BusKind::slack;
            break;
        case 4:
            throw ParseError("isolated bus (type 4) " + std::to_string(b.id) + " is not supported", row.line);
        default:
            throw ParseError("unknown bus type " + std::to_string(v[1]), row.line);
        }
        b.shunt_g = v[4] / base;
        b.shunt_b = v[5] / base;
        b.v_mag_init = v[7];
        b.v_ang_init = v[8] * deg2rad;
        grid.buses.push_back(b);
        if (v[2] != 0.0 || v[3] != 0.0)
            grid.loads.push_back({b.id, v[2] / base, v[3] / base, true});
    }

    for (const auto& row : require_table(tables, "gen")) {
        require_columns(row, 10, "gen");
        const auto& v = row.values;
        Generator g;
        g.bus = as_id(v[0], row.line);
        g.p_set = v[1] / base;
        g.q_max = v[3] / base;
        g.q_min = v[4] / base;
        g.v_set = v[5];
        g.in_service = v[7] > 0;
        g.p_max = v[8] / base;
        g.p_min = v[9] / base;
        g.participation = std::max(0.0, g.p_max - g.p_min);
        grid.generators.push_back(g);
    }

    for (const auto& row : require_table(tables, "branch")) {
        require_columns(row, 11, "branch");
        const auto& v = row.values;
        Branch br;
        br.from_bus = as_id(v[0], row.line);
        br.to_bus = as_id(v[1], row.line);
        br.r = v[2];
        br.x = v[3];
        br.b_charging = v[4];
        br.tap_ratio = v[8] == 0.0 ? 1.0 : v[8];
        br.phase_shift = v[9] * deg2rad;
        br.in_service = v[10] > 0;
        grid.branches.push_back(br);
    }

    require_valid(grid);
    return grid;
}

// ---------------------------------------------------------------------------
// Native JSON

nlohmann::ordered_json to_json(const GridCase& grid) {
    nlohmann::ordered_json doc;
    doc["base_mva"] = grid.base_mva;
    auto& buses = doc["buses"] = nlohmann::ordered_json::array();
    for (const auto& b : grid.buses) {
        buses.push_back({{"id", b.id},
                         {"kind", to_string(b.kind)},
                         {"v_mag_init", b.v_mag_init},
                         {"v_ang_init", b.v_ang_init},
                         {"shunt_g", b.shunt_g},
                         {"shunt_b", b.shunt_b}});
    }
    auto& branches = doc["branches"] = nlohmann::ordered_json::array();
    for (const auto& br : grid.branches) {
        branches.push_back({{"from_bus", br.from_bus},
                            {"to_bus", br.to_bus},
                            {"r", br.r},
                            {"x", br.x},
                            {"b_charging", br.b_charging},
                            {"tap_ratio", br.tap_ratio},
                            {"phase_shift", br.phase_shift},
                            {"in_service", br.in_service}});
    }
    auto& gens = doc["generators"] = nlohmann::ordered_json::array();
    for (const auto& g : grid.generators) {
        gens.push_back({{"bus", g.bus},
                        {"p_set", g.p_set},
                        {"v_set", g.v_set},
                        {"p_max", g.p_max},
                        {"p_min", g.p_min},
                        {"participation", g.participation},
                        {"in_service", g.in_service},
                        {"q_max", g.q_max},
                        {"q_min", g.q_min}});
    }
    auto& loads = doc["loads"] = nlohmann::ordered_json::array();
    for (const auto& l : grid.loads)
        loads.push_back({{"bus", l.bus}, {"p", l.p}, {"q", l.q}, {"in_service", l.in_service}});
    return doc;
}

namespace {

const nlohmann::json& member(const nlohmann::json& obj, const char* key, const std::string& path) {
    if (!obj.is_object())
        throw SchemaError(path + ": expected an object");
    auto it = obj.find(key);
    if (it == obj.end())
        throw SchemaError(path + "." + key + ": missing");
    return *it;
}

double num(const nlohmann::json& obj, const char* key, const std::string& path) {
    const auto& v = member(obj, key, path);
    if (!v.is_number())
        throw SchemaError(path + "." + key + ": expected a number");
    return v.get<double>();
}

double num_or(const nlohmann::json& obj, const char* key, const std::string& path, double fallback) {
    if (obj.is_object() && !obj.contains(key))
        return fallback;
    return num(obj, key, path);
}

int integer(const nlohmann::json& obj, const char* key, const std::string& path) {
    const auto& v = member(obj, key, path);
    if (!v.is_number_integer())
        throw SchemaError(path + "." + key + ": expected an integer");
    return v.get<int>();
}

bool boolean(const nlohmann::json& obj, const char* key, const std::string& path) {
    const auto& v = member(obj, key, path);
    if (!v.is_boolean())
        throw SchemaError(path + "." + key + ": expected a boolean");
    return v.get<bool>();
}

const nlohmann::json& array(const nlohmann::json& obj, const char* key, const std::string& path) {
    const auto& v = member(obj, key, path);
    if (!v.is_array())
        throw SchemaError(path + "." + key + ": expected an array");
    return v;
}

std::string at(const std::string& path, const char* key, std::size_t i) {
    return path + "." + key + "[" + std::to_string(i) + "]";
}

} // namespace

GridCase grid_from_json(const nlohmann::json& doc, const std::string& path) {
    if (!doc.is_object())
        throw SchemaError(path + ": expected an object");
    GridCase grid;
    grid.base_mva = num(doc, "base_mva", path);

    const auto& buses = array(doc, "buses", path);
    for (std::size_t i = 0; i < buses.size(); ++i) {
        const auto p = at(path, "buses", i);
        const auto& b = buses[i];
        Bus bus;
        bus.id = integer(b, "id", p);
        const auto& kind = member(b, "kind", p);
        auto parsed = kind.is_string() ? bus_kind_from_string(kind.get<std::string>()) : std::nullopt;
        if (!parsed)
            throw SchemaError(p + ".kind: expected one of slack, pv, pq");
        bus.kind = *parsed;
        bus.v_mag_init = num(b, "v_mag_init", p);
        bus.v_ang_init = num(b, "v_ang_init", p);
        bus.shunt_g = num(b, "shunt_g", p);
        bus.shunt_b = num(b, "shunt_b", p);
        grid.buses.push_back(bus);
    }

    const auto& branches = array(doc, "branches", path);
    for (std::size_t i = 0; i < branches.size(); ++i) {
        const auto p = at(path, "branches", i);
        const auto& b = branches[i];
        Branch br;
        br.from_bus = integer(b, "from_bus", p);
        br.to_bus = integer(b, "to_bus", p);
        br.r = num(b, "r", p);
        br.x = num(b, "x", p);
        br.b_charging = num(b, "b_charging", p);
        br.tap_ratio = num(b, "tap_ratio", p);
        br.phase_shift = num(b, "phase_shift", p);
        br.in_service = boolean(b, "in_service", p);
        grid.branches.push_back(br);
    }

    const auto& gens = array(doc, "generators", path);
    for (std::size_t i = 0; i < gens.size(); ++i) {
        const auto p = at(path, "generators", i);
        const auto& g = gens[i];
        Generator gen;
        gen.bus = integer(g, "bus", p);
        gen.p_set = num(g, "p_set", p);
        gen.v_set = num(g, "v_set", p);
        gen.p_max = num(g, "p_max", p);
        gen.p_min = num(g, "p_min", p);
        gen.participation = num(g, "participation", p);
        gen.in_service = boolean(g, "in_service", p);
        gen.q_max = num_or(g, "q_max", p, gen.q_max);
        gen.q_min = num_or(g, "q_min", p, gen.q_min);
        grid.generators.push_back(gen);
    }

    const auto& loads = array(doc, "loads", path);
    for (std::size_t i = 0; i < loads.size(); ++i) {
        const auto p = at(path, "loads", i);
        const auto& l = loads[i];
        grid.loads.push_back({integer(l, "bus", p), num(l, "p", p), num(l, "q", p), boolean(l, "in_service", p)});
    }
    return grid;
}

GridCase parse_native(std::string_view text) {
    if (trim(text).empty())
        throw SchemaError("$: empty document");
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw SchemaError(std::string("$: not valid JSON: ") + e.what());
    }
    return grid_from_json(doc);
}

std::string serialize_native(const GridCase& grid) { return to_json(grid).dump(1) + "\n"; }

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError("cannot open '" + path + "' for reading");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text_file(const std::string& path, std::string_view contents) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw IoError("cannot open '" + path + "' for writing");
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out)
        throw IoError("write to '" + path + "' failed");
}

GridCase load_case_file(const std::string& path) {
    const auto text = read_text_file(path);
    if (path.ends_with(".m"))
        return parse_matpower(text);
    auto grid = parse_native(text);
    require_valid(grid);
    return grid;
}

} // namespace gridwarm
