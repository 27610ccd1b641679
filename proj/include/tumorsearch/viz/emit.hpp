#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "tumorsearch/core/binary_io.hpp"
#include "tumorsearch/phantom/manifest.hpp"
#include "tumorsearch/retrieval/evaluate.hpp"
#include "tumorsearch/retrieval/index.hpp"
#include "tumorsearch/viz/canvas.hpp"
#include "tumorsearch/viz/projection.hpp"

namespace tumorsearch::viz {

using retrieval::EmbeddingTable;
using retrieval::KnnEvalReport;

/// Shortest decimal text that reads back to the same double.
inline std::string num(double v) {
    std::ostringstream s;
    s << std::setprecision(17) << v;
    double back = 0.0;
    for (int p = 1; p <= 17; ++p) {
        std::ostringstream t;
        t << std::setprecision(p) << v;
        std::istringstream(t.str()) >> back;
        if (back == v) return t.str();
    }
    return s.str();
}

inline std::filesystem::path with_ext(std::filesystem::path p, const char* ext) { return p.replace_extension(ext); }

struct Bounds {
    double lo_x = 0, hi_x = 1, lo_y = 0, hi_y = 1;

    static Bounds of(const std::vector<double>& xs, const std::vector<double>& ys) {
        Bounds b;
        if (xs.empty()) return b;
        b.lo_x = *std::min_element(xs.begin(), xs.end());
        b.hi_x = *std::max_element(xs.begin(), xs.end());
        b.lo_y = *std::min_element(ys.begin(), ys.end());
        b.hi_y = *std::max_element(ys.begin(), ys.end());
        if (b.hi_x - b.lo_x < 1e-12) b.hi_x = b.lo_x + 1.0;
        if (b.hi_y - b.lo_y < 1e-12) b.hi_y = b.lo_y + 1.0;
        return b;
    }
};

/// Scatter of 2D coordinates (color = linear size, marker = type) plus a
/// CSV twin: tumor_id,x,y,size,type. Returns the CSV path.
inline std::filesystem::path emit_scatter(const Points& coords, const EmbeddingTable& table,
                                          const std::filesystem::path& out_path) {
    if (table.rows.empty()) throw Error("cannot plot an empty table");
    if (coords.rows() != static_cast<Eigen::Index>(table.rows.size()) || coords.cols() != 2) {
        throw ShapeError("coordinates have " + std::to_string(coords.rows()) + " rows, table has " +
                         std::to_string(table.rows.size()));
    }
    std::ostringstream csv;
    csv << "tumor_id,x,y,size,type\n";
    std::vector<double> xs, ys, sizes;
    for (std::size_t i = 0; i < table.rows.size(); ++i) {
        const auto& row = table.rows[i];
        const double x = coords(static_cast<Eigen::Index>(i), 0), y = coords(static_cast<Eigen::Index>(i), 1);
        csv << row.tumor_id << ',' << num(x) << ',' << num(y) << ',' << num(row.labels.linear_size_mm) << ','
            << to_string(row.labels.type) << '\n';
        xs.push_back(x);
        ys.push_back(y);
        sizes.push_back(row.labels.linear_size_mm);
    }
    const auto csv_path = with_ext(out_path, ".csv");
    io::write_text(csv_path, csv.str());

    const int w = 640, h = 640, pad = 30;
    Canvas canvas(w, h);
    const Bounds b = Bounds::of(xs, ys);
    const auto [smin, smax] = std::minmax_element(sizes.begin(), sizes.end());
    const double srange = std::max(1e-9, *smax - *smin);
    canvas.rect(pad - 5, pad - 5, w - pad + 5, h - pad + 5, kGray);
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const int px = pad + static_cast<int>(std::lround((xs[i] - b.lo_x) / (b.hi_x - b.lo_x) * (w - 2 * pad)));
        const int py = h - pad - static_cast<int>(std::lround((ys[i] - b.lo_y) / (b.hi_y - b.lo_y) * (h - 2 * pad)));
        canvas.marker(px, py, static_cast<int>(table.rows[i].labels.type), 4, colormap((sizes[i] - *smin) / srange));
    }
    canvas.save_png(with_ext(out_path, ".png"));
    return csv_path;
}

/// Metric names a report provides: one accuracy per task plus size RMSE.
inline std::vector<std::string> report_metrics(const KnnEvalReport& r) {
    std::vector<std::string> names;
    for (const auto& m : r.tasks) names.push_back("accuracy_" + std::string(to_string(m.task)));
    names.push_back("size_rmse_mm");
    return names;
}

inline double report_metric(const KnnEvalReport& r, const std::string& name) {
    if (name == "size_rmse_mm") return r.size_rmse_mm;
    return r.accuracy(task_from_string(name.substr(std::string("accuracy_").size())));
}

/// Curves of every metric over K; CSV twin has columns metric,k,value.
inline std::filesystem::path emit_k_sweep(std::vector<KnnEvalReport> reports, const std::filesystem::path& out_path) {
    if (reports.size() < 2) throw Error("K sweep plot needs at least 2 reports");
    std::stable_sort(reports.begin(), reports.end(), [](const auto& a, const auto& b) { return a.k < b.k; });
    std::set<std::string> all;
    for (const auto& r : reports) {
        for (const auto& m : report_metrics(r)) all.insert(m);
    }
    for (const auto& r : reports) {
        const auto names = report_metrics(r);
        for (const auto& m : all) {
            if (std::find(names.begin(), names.end(), m) == names.end()) {
                throw Error("report for K=" + std::to_string(r.k) + " lacks metric '" + m + "'");
            }
        }
    }
    const auto metrics = report_metrics(reports.front());
    std::ostringstream csv;
    csv << "metric,k,value\n";
    for (const auto& m : metrics) {
        for (const auto& r : reports) csv << m << ',' << r.k << ',' << num(report_metric(r, m)) << '\n';
    }
    const auto csv_path = with_ext(out_path, ".csv");
    io::write_text(csv_path, csv.str());

    // left panel: accuracies on [0, 1]; right panel: RMSE on its own scale
    const int pw = 400, h = 320, pad = 25;
    Canvas canvas(2 * pw, h);
    const double k_lo = reports.front().k, k_hi = std::max<double>(reports.back().k, k_lo + 1);
    auto px = [&](int panel, double k) {
        return panel * pw + pad + static_cast<int>(std::lround((k - k_lo) / (k_hi - k_lo) * (pw - 2 * pad)));
    };
    double rmse_hi = 1e-9;
    for (const auto& r : reports) rmse_hi = std::max(rmse_hi, r.size_rmse_mm);
    for (int panel = 0; panel < 2; ++panel) canvas.rect(panel * pw + pad, pad, panel * pw + pw - pad, h - pad, kGray);
    for (std::size_t mi = 0; mi < metrics.size(); ++mi) {
        const bool rmse = metrics[mi] == "size_rmse_mm";
        const int panel = rmse ? 1 : 0;
        const double top = rmse ? rmse_hi : 1.0;
        int last_x = 0, last_y = 0;
        for (std::size_t i = 0; i < reports.size(); ++i) {
            const int x = px(panel, reports[i].k);
            const int y = h - pad - static_cast<int>(std::lround(report_metric(reports[i], metrics[mi]) / top * (h - 2 * pad)));
            if (i) canvas.line(last_x, last_y, x, y, palette(mi));
            canvas.marker(x, y, 0, 2, palette(mi));
            last_x = x;
            last_y = y;
        }
    }
    canvas.save_png(with_ext(out_path, ".png"));
    return csv_path;
}

/// Query tumor plus its K nearest neighbors from other images, each shown
/// as the axial slice through its box center with the box outlined. The
/// sidecar JSON lists the neighbors. Returns the sidecar path.
inline std::filesystem::path emit_retrieval_panel(const phantom::DatasetManifest& manifest, const EmbeddingTable& table,
                                                  const std::string& tumor_id, int k,
                                                  const std::filesystem::path& out_path) {
    if (k < 1) throw Error("K must be at least 1");
    const auto* query = table.find(tumor_id);
    if (!query) throw Error("unknown tumor id '" + tumor_id + "'");
    const retrieval::RetrievalIndex index(table);
    const auto result = index.query(query->embedding, static_cast<std::size_t>(k), query->image_id);

    std::map<std::string, const phantom::TumorRecord*> records;
    for (const auto& image : manifest.images) {
        for (const auto& t : image.tumors) records[t.tumor_id] = &t;
    }
    std::vector<std::pair<std::string, double>> shown{{tumor_id, 0.0}};
    for (const auto& nb : result.neighbors) shown.push_back({nb.tumor_id, nb.distance});

    const int scale = 4, gap = 8;
    std::vector<Canvas> tiles;
    nlohmann::json panels = nlohmann::json::array();
    for (const auto& [id, distance] : shown) {
        auto it = records.find(id);
        if (it == records.end()) throw Error("tumor '" + id + "' is not in the manifest");
        const auto& rec = *it->second;
        const auto& image = manifest.image(rec.image_id);
        const auto volume = manifest.load_volume(image);
        const int z = (rec.bbox.start[2] + rec.bbox.stop[2] - 1) / 2;
        float lo = *std::min_element(volume.data.begin(), volume.data.end());
        float hi = *std::max_element(volume.data.begin(), volume.data.end());
        if (hi - lo < 1e-6f) hi = lo + 1.0f;
        // rows = axis 1, columns = axis 0
        Canvas tile(volume.shape[0] * scale, volume.shape[1] * scale, kBlack);
        for (int x = 0; x < volume.shape[0]; ++x) {
            for (int y = 0; y < volume.shape[1]; ++y) {
                const auto g = static_cast<std::uint8_t>(std::lround(255.0 * (volume(x, y, z) - lo) / (hi - lo)));
                tile.fill_rect(x * scale, y * scale, x * scale + scale - 1, y * scale + scale - 1, {g, g, g});
            }
        }
        const Rgb outline = panels.empty() ? Rgb{255, 64, 64} : Rgb{64, 220, 64};
        tile.rect(rec.bbox.start[0] * scale, rec.bbox.start[1] * scale, rec.bbox.stop[0] * scale - 1,
                  rec.bbox.stop[1] * scale - 1, outline);
        tiles.push_back(std::move(tile));
        panels.push_back({{"tumor_id", id},
                          {"image_id", rec.image_id},
                          {"slice_axis", 2},
                          {"slice_index", z},
                          {"bbox", phantom::bbox_to_json(rec.bbox)},
                          {"type", to_string(rec.labels.type)}});
    }
    int width = gap, height = 0;
    for (const auto& t : tiles) {
        width += t.width() + gap;
        height = std::max(height, t.height());
    }
    Canvas montage(width, height + 2 * gap);
    int x0 = gap;
    for (const auto& t : tiles) {
        for (int y = 0; y < t.height(); ++y) {
            for (int x = 0; x < t.width(); ++x) montage.set(x0 + x, gap + y, t.get(x, y));
        }
        x0 += t.width() + gap;
    }
    montage.save_png(with_ext(out_path, ".png"));

    nlohmann::json neighbors = nlohmann::json::array();
    for (const auto& nb : result.neighbors) neighbors.push_back({{"tumor_id", nb.tumor_id}, {"distance", nb.distance}});
    const nlohmann::json sidecar{{"query", tumor_id},
                                 {"k", k},
                                 {"truncated", result.truncated},
                                 {"panels", panels},
                                 {"neighbors", neighbors}};
    const auto json_path = with_ext(out_path, ".json");
    io::write_text(json_path, sidecar.dump(2));
    return json_path;
}

/// Rows-by-columns comparison table written as CSV.
inline void emit_comparison_table(const std::vector<std::string>& columns,
                                  const std::vector<std::pair<std::string, std::vector<double>>>& rows,
                                  const std::filesystem::path& out_path) {
    std::ostringstream csv;
    csv << "row";
    for (const auto& c : columns) csv << ',' << c;
    csv << '\n';
    for (const auto& [name, values] : rows) {
        if (values.size() != columns.size()) throw ShapeError("row '" + name + "' has the wrong number of values");
        csv << name;
        for (double v : values) csv << ',' << num(v);
        csv << '\n';
    }
    io::write_text(out_path, csv.str());
}

/// Reads the CSV twin of a scatter back as (tumor_id, x, y, size, type).
struct ScatterRow {
    std::string tumor_id;
    double x = 0, y = 0, size = 0;
    std::string type;
};

inline std::vector<ScatterRow> read_scatter_csv(const std::filesystem::path& path) {
    std::istringstream in(io::read_text(path));
    std::string line;
    std::getline(in, line);
    if (line != "tumor_id,x,y,size,type") throw IoError("unexpected scatter CSV header in '" + path.string() + "'");
    std::vector<ScatterRow> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream fields(line);
        ScatterRow r;
        std::string x, y, s;
        std::getline(fields, r.tumor_id, ',');
        std::getline(fields, x, ',');
        std::getline(fields, y, ',');
        std::getline(fields, s, ',');
        std::getline(fields, r.type, ',');
        r.x = std::stod(x);
        r.y = std::stod(y);
        r.size = std::stod(s);
        rows.push_back(std::move(r));
    }
    return rows;
}

}  // namespace tumorsearch::viz
