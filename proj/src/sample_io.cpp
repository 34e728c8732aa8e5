#include "aerodiff/sample_io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>

#include "aerodiff/error.hpp"
#include "bytes.hpp"

namespace aerodiff {

namespace fs = std::filesystem;

namespace {

constexpr char kMagic[8] = {'A', 'D', 'F', 'I', 'E', 'L', 'D', '\0'};
constexpr std::uint32_t kMaxSide = 1u << 14;

}  // namespace

std::vector<std::uint8_t> serialize_sample(const FieldSample& s) {
    validate_sample(s, "serialize_sample");
    detail::ByteWriter w;
    w.raw(std::span(reinterpret_cast<const std::uint8_t*>(kMagic), 8));
    w.u32(kSampleFormatVersion);
    w.u32(0);
    w.u32(s.meta.case_id);
    w.f64(s.meta.reynolds);
    w.f64(s.meta.alpha_deg);
    w.u32(s.meta.replicate);
    w.u32(static_cast<std::uint32_t>(s.height()));
    w.u32(static_cast<std::uint32_t>(s.width()));
    for (double v : s.condition.values()) w.f32(static_cast<float>(v));
    for (double v : s.target.values()) w.f32(static_cast<float>(v));
    return std::move(w.bytes);
}

FieldSample deserialize_sample(std::span<const std::uint8_t> bytes, const std::string& origin) {
    detail::ByteReader r(bytes, origin, ErrorKind::Parse);
    const auto magic = r.raw(8, "magic");
    if (!std::equal(magic.begin(), magic.end(), reinterpret_cast<const std::uint8_t*>(kMagic)))
        r.error("field 'magic' does not identify a sample file");
    const std::uint32_t version = r.u32("version");
    if (version != kSampleFormatVersion) r.error("field 'version' is " + std::to_string(version) + ", expected 1");
    r.u32("reserved");
    FieldSample s;
    s.meta.case_id = r.u32("case_id");
    s.meta.reynolds = r.f64("reynolds");
    s.meta.alpha_deg = r.f64("alpha_deg");
    s.meta.replicate = r.u32("replicate");
    const std::uint32_t h = r.u32("height"), w = r.u32("width");
    if (h == 0 || w == 0 || h > kMaxSide || w > kMaxSide)
        r.error("fields 'height'/'width' out of range: " + std::to_string(h) + "x" + std::to_string(w));
    const std::size_t plane = std::size_t{h} * w;
    if (r.remaining() != 6 * plane * 4)
        r.error("payload holds " + std::to_string(r.remaining()) + " bytes, expected " + std::to_string(6 * plane * 4) +
                " for six " + std::to_string(h) + "x" + std::to_string(w) + " planes");
    s.condition = Tensor({kConditionChannels, h, w});
    s.target = Tensor({kTargetChannels, h, w});
    for (double& v : s.condition.values()) v = r.f32("condition planes");
    for (double& v : s.target.values()) v = r.f32("target planes");
    try {
        validate_sample(s, origin);
    } catch (const Error& e) {
        fail(ErrorKind::Validation, e.what());
    }
    return s;
}

std::vector<std::uint8_t> read_file_bytes(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), ErrorKind::Io, "cannot open " + path.string());
    return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void write_file_bytes(const fs::path& path, std::span<const std::uint8_t> bytes) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    require(out.good(), ErrorKind::Io, "cannot write " + path.string());
}

void write_text_file(const fs::path& path, const std::string& text) {
    write_file_bytes(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

void write_sample(const fs::path& path, const FieldSample& sample) { write_file_bytes(path, serialize_sample(sample)); }

FieldSample read_sample(const fs::path& path) { return deserialize_sample(read_file_bytes(path), path.string()); }

std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

double parse_double(const std::string& text, const std::string& what) {
    double v = 0.0;
    const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
    require(res.ec == std::errc() && res.ptr == text.data() + text.size(), ErrorKind::Parse,
            what + ": '" + text + "' is not a number");
    return v;
}

namespace {

std::uint32_t parse_u32(const std::string& text, const std::string& what) {
    std::uint32_t v = 0;
    const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
    require(res.ec == std::errc() && res.ptr == text.data() + text.size(), ErrorKind::Parse,
            what + ": '" + text + "' is not an unsigned integer");
    return v;
}

fs::path sample_relpath(const SampleMeta& m) {
    char name[64];
    std::snprintf(name, sizeof name, "case%03u_rep%03u.bin", m.case_id, m.replicate);
    return fs::path("samples") / name;
}

}  // namespace

std::string format_manifest(const Manifest& m) {
    std::ostringstream out;
    out << "# aerodiff dataset manifest v1\n";
    out << "re_max " << format_double(m.split.re_max) << "\n";
    for (const auto& [id, c] : m.split.cases)
        out << "case " << id << ' ' << format_double(c.reynolds) << ' ' << to_string(c.subset) << ' '
            << to_string(c.category) << ' ' << to_string(c.region) << "\n";
    for (const auto& s : m.samples) out << "sample " << s.case_id << ' ' << s.replicate << ' ' << s.path << "\n";
    return out.str();
}

Manifest parse_manifest(const std::string& text, const std::string& origin) {
    Manifest m;
    bool have_re_max = false;
    std::istringstream in(text);
    std::string line;
    for (int lineno = 1; std::getline(in, line); ++lineno) {
        const std::string where = origin + ":" + std::to_string(lineno);
        std::istringstream fields(line);
        std::vector<std::string> tok{std::istream_iterator<std::string>(fields), {}};
        if (tok.empty() || tok[0][0] == '#') continue;
        auto arity = [&](std::size_t n) {
            require(tok.size() == n, ErrorKind::Parse,
                    where + ": '" + tok[0] + "' record needs " + std::to_string(n - 1) + " fields");
        };
        if (tok[0] == "re_max") {
            arity(2);
            m.split.re_max = parse_double(tok[1], where + " field 're_max'");
            have_re_max = true;
        } else if (tok[0] == "case") {
            arity(6);
            CaseInfo c;
            c.id = parse_u32(tok[1], where + " field 'case id'");
            c.reynolds = parse_double(tok[2], where + " field 'reynolds'");
            try {
                c.subset = subset_from_string(tok[3]);
                c.category = category_from_string(tok[4]);
                c.region = region_from_string(tok[5]);
            } catch (const Error& e) {
                fail(ErrorKind::Parse, where + ": " + e.what());
            }
            require(m.split.cases.emplace(c.id, c).second, ErrorKind::Parse,
                    where + ": case " + std::to_string(c.id) + " listed twice");
        } else if (tok[0] == "sample") {
            arity(4);
            m.samples.push_back({parse_u32(tok[1], where + " field 'case id'"),
                                 parse_u32(tok[2], where + " field 'replicate'"), tok[3]});
            require(m.split.cases.count(m.samples.back().case_id), ErrorKind::Parse,
                    where + ": sample refers to undeclared case " + std::to_string(m.samples.back().case_id));
        } else {
            fail(ErrorKind::Parse, where + ": unknown record '" + tok[0] + "'");
        }
    }
    require(have_re_max || m.split.cases.empty(), ErrorKind::Parse, origin + ": missing 're_max' record");
    for (const auto& [id, c] : m.split.cases)
        require(c.reynolds > 0.0 && c.reynolds <= m.split.re_max, ErrorKind::Validation,
                origin + ": case " + std::to_string(id) + " has Re outside (0, re_max]");
    return m;
}

void save_dataset(const fs::path& root, const Dataset& d) {
    Manifest m;
    m.split = d.split;
    std::vector<const FieldSample*> order;
    for (const auto& s : d.samples) order.push_back(&s);
    std::sort(order.begin(), order.end(), [](const FieldSample* a, const FieldSample* b) {
        return std::pair(a->meta.case_id, a->meta.replicate) < std::pair(b->meta.case_id, b->meta.replicate);
    });
    for (const FieldSample* s : order) {
        d.split.at(s->meta.case_id);
        const fs::path rel = sample_relpath(s->meta);
        write_sample(root / rel, *s);
        m.samples.push_back({s->meta.case_id, s->meta.replicate, rel.generic_string()});
    }
    write_text_file(root / kManifestName, format_manifest(m));
}

Dataset load_dataset(const fs::path& root) {
    require(fs::is_directory(root), ErrorKind::Io, "dataset root " + root.string() + " is not a directory");
    Dataset d;
    const fs::path manifest_path = root / kManifestName;
    if (!fs::exists(manifest_path)) {
        require(fs::is_empty(root), ErrorKind::Parse, root.string() + " has files but no " + kManifestName);
        d.warnings.push_back("dataset root " + root.string() + " is empty; no samples loaded");
        return d;
    }
    const auto bytes = read_file_bytes(manifest_path);
    Manifest m = parse_manifest(std::string(bytes.begin(), bytes.end()), manifest_path.string());
    d.split = m.split;

    std::set<std::pair<std::uint32_t, std::uint32_t>> seen;
    std::vector<FieldSample> loaded;
    for (const auto& e : m.samples) {
        const fs::path p = root / e.path;
        FieldSample s = read_sample(p);
        require(s.meta.case_id == e.case_id && s.meta.replicate == e.replicate, ErrorKind::Validation,
                p.string() + ": header says case " + std::to_string(s.meta.case_id) + " replicate " +
                    std::to_string(s.meta.replicate) + " but the manifest says case " + std::to_string(e.case_id) +
                    " replicate " + std::to_string(e.replicate));
        const CaseInfo& c = d.split.at(e.case_id);
        require(s.meta.reynolds == c.reynolds, ErrorKind::Validation,
                p.string() + ": Reynolds number disagrees with the manifest case record");
        require(seen.emplace(e.case_id, e.replicate).second, ErrorKind::Validation,
                p.string() + ": duplicate (case, replicate) entry");
        if (!loaded.empty())
            require(s.target.shape() == loaded.front().target.shape(), ErrorKind::Validation,
                    p.string() + ": grid size differs from the rest of the dataset");
        loaded.push_back(std::move(s));
    }
    d.samples = std::move(loaded);
    if (d.samples.empty()) d.warnings.push_back("manifest " + manifest_path.string() + " lists no samples");
    return d;
}

}  // namespace aerodiff
