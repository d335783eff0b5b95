#include "ga/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <unordered_set>

#include "ga/errors.hpp"

namespace ga {

namespace {

std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ss(line);
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    return cells;
}

std::string trim(std::string s) {
    while (!s.empty() && (s.back() == '\r' || s.back() == ' ' || s.back() == '\t')) s.pop_back();
    std::size_t i = 0;
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
    return s.substr(i);
}

std::string where(const std::filesystem::path& path, std::size_t line, const std::string& column) {
    return path.string() + ":" + std::to_string(line) + ": column '" + column + "'";
}

double parse_real(const std::string& cell, const std::filesystem::path& path, std::size_t line,
                  const std::string& column) {
    double v = 0.0;
    const char* b = cell.data();
    const char* e = cell.data() + cell.size();
    auto [ptr, ec] = std::from_chars(b, e, v);
    if (ec != std::errc() || ptr != e || cell.empty())
        throw ParseError(where(path, line, column) + ": cannot parse '" + cell + "' as a number");
    return v;
}

} // namespace

std::string format_real(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

void save_csv(const GeoDataset& ds, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    const std::size_t p = ds.covariate_count();
    bool with_y = !ds.points.empty();
    for (const auto& pt : ds.points) with_y = with_y && pt.y.has_value();

    out << "id,u,v";
    for (std::size_t j = 0; j < p; ++j) out << ",x" << (j + 1);
    if (with_y) out << ",y";
    out << '\n';
    for (const auto& pt : ds.points) {
        if (pt.x.size() != p) throw ContractError("save_csv: ragged covariates at id " + std::to_string(pt.id));
        out << pt.id << ',' << format_real(pt.u) << ',' << format_real(pt.v);
        for (double x : pt.x) out << ',' << format_real(x);
        if (with_y) out << ',' << format_real(*pt.y);
        out << '\n';
    }
    if (!out) throw std::runtime_error("write failed: " + path.string());
}

GeoDataset load_csv(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError(path.string() + ": cannot open for reading");
    std::string line;
    if (!std::getline(in, line)) throw ParseError(path.string() + ":1: empty file, expected a header");

    const auto header = split_line(trim(line));
    std::map<std::string, std::size_t> col;
    for (std::size_t i = 0; i < header.size(); ++i) {
        const auto name = trim(header[i]);
        if (!col.emplace(name, i).second) throw ParseError(path.string() + ":1: duplicate column '" + name + "'");
    }
    for (const char* required : {"id", "u", "v"})
        if (!col.count(required)) throw ParseError(path.string() + ":1: missing required column '" + std::string(required) + "'");

    std::vector<std::size_t> xcols;
    for (std::size_t j = 1;; ++j) {
        auto it = col.find("x" + std::to_string(j));
        if (it == col.end()) break;
        xcols.push_back(it->second);
    }
    for (const auto& [name, idx] : col) {
        if (name == "id" || name == "u" || name == "v" || name == "y") continue;
        const bool covariate = name.size() > 1 && name[0] == 'x' &&
                               std::all_of(name.begin() + 1, name.end(),
                                           [](char c) { return std::isdigit(static_cast<unsigned char>(c)) != 0; }) &&
                               std::stoul(name.substr(1)) >= 1 && std::stoul(name.substr(1)) <= xcols.size();
        if (!covariate)
            throw ParseError(path.string() + ":1: unexpected column '" + name + "' (covariates must be x1..xp)");
    }
    const std::optional<std::size_t> ycol = col.count("y") ? std::optional(col.at("y")) : std::nullopt;

    GeoDataset ds;
    std::unordered_set<std::int64_t> seen;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        line = trim(line);
        if (line.empty()) continue;
        const auto cells = split_line(line);
        if (cells.size() != header.size())
            throw ParseError(path.string() + ":" + std::to_string(lineno) + ": expected " +
                             std::to_string(header.size()) + " cells, found " + std::to_string(cells.size()));
        PointRecord pt;
        {
            const auto& c = cells[col.at("id")];
            std::int64_t id = 0;
            auto [ptr, ec] = std::from_chars(c.data(), c.data() + c.size(), id);
            if (ec != std::errc() || ptr != c.data() + c.size() || c.empty())
                throw ParseError(where(path, lineno, "id") + ": cannot parse '" + c + "' as an integer id");
            pt.id = id;
        }
        if (!seen.insert(pt.id).second)
            throw ParseError(where(path, lineno, "id") + ": duplicate id " + std::to_string(pt.id));
        pt.u = parse_real(cells[col.at("u")], path, lineno, "u");
        pt.v = parse_real(cells[col.at("v")], path, lineno, "v");
        if (!std::isfinite(pt.u) || !std::isfinite(pt.v))
            throw ParseError(path.string() + ":" + std::to_string(lineno) + ": non-finite coordinates");
        pt.x.reserve(xcols.size());
        for (std::size_t j = 0; j < xcols.size(); ++j)
            pt.x.push_back(parse_real(cells[xcols[j]], path, lineno, "x" + std::to_string(j + 1)));
        if (ycol) pt.y = parse_real(cells[*ycol], path, lineno, "y");
        ds.points.push_back(std::move(pt));
    }
    const auto mp = meta_path_for(path);
    if (std::filesystem::exists(mp)) ds.meta = load_meta(mp);
    return ds;
}

std::filesystem::path meta_path_for(const std::filesystem::path& csv_path) {
    auto p = csv_path;
    p.replace_extension(".meta.json");
    return p;
}

void save_meta(const DatasetMeta& meta, const std::filesystem::path& path) {
    nlohmann::json j;
    j["generator"] = meta.generator;
    j["seed"] = meta.seed;
    j["params"] = meta.params;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    out << j.dump(2) << '\n';
}

DatasetMeta load_meta(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError(path.string() + ": cannot open for reading");
    nlohmann::json j;
    try {
        in >> j;
        DatasetMeta m;
        m.generator = j.at("generator").get<std::string>();
        m.seed = j.at("seed").get<std::uint64_t>();
        m.params = j.at("params");
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
}

} // namespace ga
