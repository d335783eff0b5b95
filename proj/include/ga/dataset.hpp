#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

namespace ga {

/// One geo-referenced row: planar coordinates, covariates, optional target.
struct PointRecord {
    std::int64_t id = 0;
    double u = 0.0;
    double v = 0.0;
    std::vector<double> x;
    std::optional<double> y;

    friend bool operator==(const PointRecord&, const PointRecord&) = default;
};

struct DatasetMeta {
    std::string generator;
    std::uint64_t seed = 0;
    nlohmann::json params = nlohmann::json::object();

    friend bool operator==(const DatasetMeta&, const DatasetMeta&) = default;
};

struct GeoDataset {
    std::vector<PointRecord> points;
    DatasetMeta meta;

    std::size_t covariate_count() const { return points.empty() ? 0 : points.front().x.size(); }

    friend bool operator==(const GeoDataset&, const GeoDataset&) = default;
};

/// Writes `id,u,v,x1..xp[,y]` with 17 significant digits. The y column is
/// written when every point carries a target.
void save_csv(const GeoDataset& ds, const std::filesystem::path& path);

/// Reads a dataset CSV. Columns are located by name; covariates are the
/// columns x1..xp and p is inferred from the header. Throws ParseError with
/// file, row and column context.
GeoDataset load_csv(const std::filesystem::path& path);

/// `data.csv` -> `data.meta.json`
std::filesystem::path meta_path_for(const std::filesystem::path& csv_path);
void save_meta(const DatasetMeta& meta, const std::filesystem::path& path);
DatasetMeta load_meta(const std::filesystem::path& path);

/// Fixed-width-free formatting used by every CSV writer ("%.17g").
std::string format_real(double v);

} // namespace ga
