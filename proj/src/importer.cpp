#include "aerodiff/importer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <regex>
#include <set>
#include <sstream>

#include "aerodiff/error.hpp"
#include "aerodiff/sample_io.hpp"
#include "bytes.hpp"

namespace aerodiff {

namespace fs = std::filesystem;

NpyArray read_npy(const fs::path& path) {
    const auto bytes = read_file_bytes(path);
    detail::ByteReader r(bytes, path.string(), ErrorKind::Import);
    const auto magic = r.raw(6, "npy magic");
    if (!(magic[0] == 0x93 && std::string(magic.begin() + 1, magic.end()) == "NUMPY")) r.error("not an .npy file");
    const auto version = r.raw(2, "npy version");
    std::size_t header_len;
    if (version[0] == 1) {
        const auto b = r.raw(2, "header length");
        header_len = b[0] | (std::size_t{b[1]} << 8);
    } else {
        header_len = r.u32("header length");
    }
    const auto header_bytes = r.raw(header_len, "npy header");
    const std::string header(header_bytes.begin(), header_bytes.end());

    std::smatch m;
    if (!std::regex_search(header, m, std::regex(R"('descr'\s*:\s*'([^']*)')"))) r.error("npy header lacks 'descr'");
    const std::string descr = m[1];
    if (descr != "<f4" && descr != "<f8") r.error("unsupported dtype '" + descr + "' (need <f4 or <f8)");
    if (!std::regex_search(header, m, std::regex(R"('fortran_order'\s*:\s*(True|False))")) || m[1] == "True")
        r.error("only C-ordered arrays are supported");
    if (!std::regex_search(header, m, std::regex(R"('shape'\s*:\s*\(([^)]*)\))"))) r.error("npy header lacks 'shape'");
    NpyArray a;
    std::string dims = m[1];
    const std::regex digits(R"(\d+)");
    for (std::sregex_iterator it(dims.begin(), dims.end(), digits), end; it != end; ++it)
        a.shape.push_back(std::stoull(it->str()));
    const std::size_t n = shape_size(a.shape);
    const std::size_t width = descr == "<f4" ? 4 : 8;
    if (r.remaining() != n * width)
        r.error("payload holds " + std::to_string(r.remaining()) + " bytes, expected " + std::to_string(n * width));
    a.values.resize(n);
    for (double& v : a.values) v = width == 4 ? r.f32("npy data") : r.f64("npy data");
    return a;
}

void write_npy(const fs::path& path, const NpyArray& a, bool float64) {
    std::string shape;
    for (std::size_t d : a.shape) shape += std::to_string(d) + ", ";
    if (a.shape.size() > 1) shape.resize(shape.size() - 2);
    std::string header = std::string("{'descr': '") + (float64 ? "<f8" : "<f4") +
                         "', 'fortran_order': False, 'shape': (" + shape + "), }";
    while ((10 + header.size() + 1) % 64 != 0) header += ' ';
    header += '\n';
    detail::ByteWriter w;
    const std::uint8_t magic[8] = {0x93, 'N', 'U', 'M', 'P', 'Y', 1, 0};
    w.raw(magic);
    w.bytes.push_back(static_cast<std::uint8_t>(header.size() & 0xFF));
    w.bytes.push_back(static_cast<std::uint8_t>(header.size() >> 8));
    w.raw(std::span(reinterpret_cast<const std::uint8_t*>(header.data()), header.size()));
    for (double v : a.values) float64 ? w.f64(v) : w.f32(static_cast<float>(v));
    write_file_bytes(path, w.bytes);
}

namespace {

struct CsvRow {
    std::string file;
    std::uint32_t case_id;
    double reynolds, alpha_deg;
    std::uint32_t replicate;
    Subset subset;
    Category category;
};

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
        cell.erase(0, cell.find_first_not_of(" \t\r"));
        cell.erase(cell.find_last_not_of(" \t\r") + 1);
        out.push_back(cell);
    }
    return out;
}

std::vector<CsvRow> read_cases_csv(const fs::path& path) {
    std::ifstream in(path);
    require(in.good(), ErrorKind::Import, "cannot open " + path.string());
    std::string line;
    std::getline(in, line);
    const std::vector<std::string> expected{"file", "case", "reynolds", "alpha_deg", "replicate", "subset", "category"};
    require(split_csv(line) == expected, ErrorKind::Import,
            path.string() + ": header must be file,case,reynolds,alpha_deg,replicate,subset,category");
    std::vector<CsvRow> rows;
    for (int lineno = 2; std::getline(in, line); ++lineno) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const auto cells = split_csv(line);
        const std::string where = path.string() + ":" + std::to_string(lineno);
        require(cells.size() == 7, ErrorKind::Import, where + ": expected 7 columns");
        try {
            rows.push_back({cells[0], static_cast<std::uint32_t>(std::stoul(cells[1])),
                            parse_double(cells[2], "reynolds"), parse_double(cells[3], "alpha_deg"),
                            static_cast<std::uint32_t>(std::stoul(cells[4])), subset_from_string(cells[5]),
                            category_from_string(cells[6])});
        } catch (const std::exception& e) {
            fail(ErrorKind::Import, where + ": " + e.what());
        }
    }
    return rows;
}

FieldSample convert(const NpyArray& a, const CsvRow& row, double re_max, const ImportOptions& opt,
                    const std::string& origin) {
    require(a.shape.size() == 3 && a.shape[0] == 6, ErrorKind::Import,
            origin + ": expected a [6, H, W] array, got " + shape_string(a.shape));
    const std::size_t h = a.shape[1], w = a.shape[2], plane = h * w;
    auto channel = [&](std::size_t c) {
        return Tensor({h, w}, std::vector<double>(a.values.begin() + c * plane, a.values.begin() + (c + 1) * plane));
    };
    const Tensor fx = channel(0), fy = channel(1), mask = channel(2);
    double sx = 0.0, sy = 0.0;
    std::size_t fluid = 0;
    for (std::size_t i = 0; i < plane; ++i)
        if (mask[i] < 0.5) {
            sx += fx[i];
            sy += fy[i];
            ++fluid;
        }
    require(fluid > 0, ErrorKind::Import, origin + ": mask covers the whole grid");
    const double speed = std::hypot(sx / fluid, sy / fluid);
    FieldSample s;
    s.meta = {row.case_id, row.reynolds, row.alpha_deg, row.replicate};
    try {
        s.target = normalize_raw_case(channel(3), channel(4), channel(5), speed, opt.freestream_pressure, mask);
        s.condition = encode_condition(mask, row.reynolds, row.alpha_deg, re_max);
    } catch (const Error& e) {
        fail(ErrorKind::Import, origin + ": " + e.what());
    }
    for (double& v : s.target.values()) v = static_cast<float>(v);
    for (double& v : s.condition.values()) v = static_cast<float>(v);
    validate_sample(s, origin);
    return s;
}

}  // namespace

Dataset import_archive(const fs::path& archive, const ImportOptions& options) {
    require(fs::is_directory(archive), ErrorKind::Import, "archive " + archive.string() + " is not a directory");
    Dataset d;
    const fs::path csv = archive / "cases.csv";
    if (!fs::exists(csv)) {
        require(fs::is_empty(archive), ErrorKind::Import, archive.string() + " has no cases.csv");
        d.warnings.push_back("archive " + archive.string() + " is empty");
        return d;
    }
    const auto rows = read_cases_csv(csv);
    for (const auto& row : rows) {
        CaseInfo c{row.case_id, row.reynolds, row.subset, row.category, Region::Interpolation};
        auto [it, fresh] = d.split.cases.emplace(c.id, c);
        require(fresh || (it->second.reynolds == c.reynolds && it->second.subset == c.subset &&
                          it->second.category == c.category),
                ErrorKind::Import, "cases.csv: case " + std::to_string(c.id) + " has inconsistent rows");
        d.split.re_max = std::max(d.split.re_max, row.reynolds);
    }
    assign_regions(d.split);

    std::vector<std::string> problems;
    std::set<std::uint32_t> bad_cases;
    for (const auto& row : rows) {
        const fs::path p = archive / row.file;
        try {
            d.samples.push_back(convert(read_npy(p), row, d.split.re_max, options, p.string()));
        } catch (const Error& e) {
            problems.push_back(e.what());
            bad_cases.insert(row.case_id);
        }
    }
    if (!problems.empty()) {
        std::string salvageable;
        for (const auto& [id, c] : d.split.cases)
            if (!bad_cases.count(id)) salvageable += (salvageable.empty() ? "" : ", ") + std::to_string(id);
        std::string msg = "import failed for " + std::to_string(problems.size()) + " file(s):";
        for (const auto& p : problems) msg += "\n  " + p;
        msg += "\nsalvageable cases: " + (salvageable.empty() ? std::string("none") : salvageable);
        fail(ErrorKind::Import, msg);
    }
    std::sort(d.samples.begin(), d.samples.end(), [](const FieldSample& a, const FieldSample& b) {
        return std::pair(a.meta.case_id, a.meta.replicate) < std::pair(b.meta.case_id, b.meta.replicate);
    });
    return d;
}

}  // namespace aerodiff
