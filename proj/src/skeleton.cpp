#include "megc/skeleton.hpp"

#include "megc/rng.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <sstream>

namespace megc {

namespace {

constexpr char kMagic[8] = {'M', 'E', 'G', 'C', 'S', 'K', 'L', '1'};
constexpr std::int64_t kMaxElements = 1LL << 30;

void put_u32(std::ostream& os, std::uint32_t v) {
    const char bytes[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                           static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
    os.write(bytes, 4);
}

void put_f64(std::ostream& os, double d) {
    const std::uint64_t v = std::bit_cast<std::uint64_t>(d);
    char bytes[8];
    for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    os.write(bytes, 8);
}

std::uint32_t take_u32(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

double take_f64(const unsigned char* p) {
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
    return std::bit_cast<double>(v);
}

}  // namespace

SkeletonSequence::SkeletonSequence(Tensor data_, int label_) : data(std::move(data_)), label(label_) {
    require_rank(data, 4, "SkeletonSequence");
    require_extent(data.extent(0), 2, "entity");
    if (label < 0) throw std::invalid_argument("SkeletonSequence: negative label");
}

SkeletonSequence center_sequence(const SkeletonSequence& s, int ref_joint) {
    const int c0 = s.channels(), t0 = s.frames(), n = s.joints();
    if (ref_joint < 0 || ref_joint >= n) {
        throw std::invalid_argument("center_sequence: ref joint " + std::to_string(ref_joint) +
                                    " outside 0.." + std::to_string(n - 1));
    }
    SkeletonSequence out = s;
    for (int e = 0; e < 2; ++e) {
        for (int c = 0; c < c0; ++c) {
            const double ref = s.at(e, c, 0, ref_joint);
            for (int t = 0; t < t0; ++t) {
                for (int j = 0; j < n; ++j) out.at(e, c, t, j) -= ref;
            }
        }
    }
    return out;
}

SkeletonSequence resize_temporal(const SkeletonSequence& s, int t_target) {
    if (t_target < 1) throw std::invalid_argument("resize_temporal: target frames must be >= 1");
    const int c0 = s.channels(), t0 = s.frames(), n = s.joints();
    if (t_target == t0) return s;
    SkeletonSequence out(Tensor({2, c0, t_target, n}), s.label);
    const double step = t_target > 1 ? static_cast<double>(t0 - 1) / (t_target - 1) : 0.0;
    for (int t = 0; t < t_target; ++t) {
        const double pos = t == t_target - 1 ? static_cast<double>(t0 - 1) : t * step;
        const int lo = std::min(static_cast<int>(pos), t0 - 1);
        const int hi = std::min(lo + 1, t0 - 1);
        const double w = pos - lo;
        for (int e = 0; e < 2; ++e)
            for (int c = 0; c < c0; ++c)
                for (int j = 0; j < n; ++j)
                    out.at(e, c, t, j) = (1.0 - w) * s.at(e, c, lo, j) + w * s.at(e, c, hi, j);
    }
    return out;
}

void save_sequence(const SkeletonSequence& s, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError(IoError::Kind::io, "cannot open for write: " + path.string());
    os.write(kMagic, 8);
    put_u32(os, static_cast<std::uint32_t>(s.entities()));
    put_u32(os, static_cast<std::uint32_t>(s.channels()));
    put_u32(os, static_cast<std::uint32_t>(s.frames()));
    put_u32(os, static_cast<std::uint32_t>(s.joints()));
    put_u32(os, static_cast<std::uint32_t>(s.label));
    for (std::int64_t i = 0; i < s.data.size(); ++i) put_f64(os, s.data[i]);
    if (!os) throw IoError(IoError::Kind::io, "write failed: " + path.string());
}

SkeletonSequence load_sequence(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError(IoError::Kind::io, "cannot open: " + path.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)),
                                     std::istreambuf_iterator<char>());
    if (bytes.size() < 8 || std::memcmp(bytes.data(), kMagic, 8) != 0) {
        throw IoError(IoError::Kind::magic_mismatch,
                      "not a MEGCSKL1 file: " + path.string());
    }
    if (bytes.size() < 8 + 5 * 4) {
        throw IoError(IoError::Kind::truncated, "header truncated: " + path.string());
    }
    const std::uint32_t entities = take_u32(bytes.data() + 8);
    const std::uint32_t c0 = take_u32(bytes.data() + 12);
    const std::uint32_t t0 = take_u32(bytes.data() + 16);
    const std::uint32_t n = take_u32(bytes.data() + 20);
    const std::uint32_t label = take_u32(bytes.data() + 24);
    if (entities != 2 || c0 == 0 || t0 == 0 || n == 0) {
        throw IoError(IoError::Kind::bad_header,
                      "bad header extents {" + std::to_string(entities) + "," +
                          std::to_string(c0) + "," + std::to_string(t0) + "," + std::to_string(n) +
                          "}: " + path.string());
    }
    const std::int64_t count = 2LL * c0 * t0 * n;
    if (count > kMaxElements) {
        throw IoError(IoError::Kind::extent_overflow,
                      "header promises " + std::to_string(count) + " elements (cap " +
                          std::to_string(kMaxElements) + "): " + path.string());
    }
    const size_t need = 28 + static_cast<size_t>(count) * 8;
    if (bytes.size() < need) {
        throw IoError(IoError::Kind::truncated,
                      "payload truncated (" + std::to_string(bytes.size()) + " of " +
                          std::to_string(need) + " bytes): " + path.string());
    }
    Tensor data({2, static_cast<int>(c0), static_cast<int>(t0), static_cast<int>(n)});
    for (std::int64_t i = 0; i < count; ++i) {
        data[i] = take_f64(bytes.data() + 28 + static_cast<size_t>(i) * 8);
    }
    return SkeletonSequence(std::move(data), static_cast<int>(label));
}

void save_manifest(const DatasetManifest& m, const std::filesystem::path& path) {
    std::ofstream os(path);
    if (!os) throw IoError(IoError::Kind::io, "cannot open for write: " + path.string());
    os << "megc-manifest v1\n";
    os << "classes = ";
    for (size_t i = 0; i < m.class_names.size(); ++i) {
        if (i) os << ",";
        os << m.class_names[i];
    }
    os << "\n";
    os << "preset = " << m.preset << "\n";
    os << "channels = " << m.channels << "\n";
    os << "joints = " << m.joints << "\n";
    for (const auto& r : m.records) os << "sample " << r.path << " " << r.label << "\n";
    if (!os) throw IoError(IoError::Kind::io, "write failed: " + path.string());
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError(IoError::Kind::io, "cannot open manifest: " + path.string());
    std::string line;
    if (!std::getline(is, line) || line != "megc-manifest v1") {
        throw IoError(IoError::Kind::magic_mismatch, "not a megc manifest: " + path.string());
    }
    DatasetManifest m;
    int lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        std::string head;
        ls >> head;
        auto fail = [&](const std::string& why) {
            throw IoError(IoError::Kind::bad_header, path.string() + ":" + std::to_string(lineno) +
                                                         ": " + why);
        };
        if (head == "sample") {
            ManifestRecord r;
            if (!(ls >> r.path >> r.label)) fail("malformed sample record");
            m.records.push_back(std::move(r));
        } else {
            std::string eq, value;
            ls >> eq;
            std::getline(ls, value);
            const size_t start = value.find_first_not_of(' ');
            value = start == std::string::npos ? "" : value.substr(start);
            if (eq != "=") fail("expected 'key = value'");
            if (head == "classes") {
                std::istringstream cs(value);
                std::string name;
                while (std::getline(cs, name, ',')) {
                    if (!name.empty()) m.class_names.push_back(name);
                }
            } else if (head == "preset") {
                m.preset = value;
            } else if (head == "channels") {
                m.channels = std::stoi(value);
            } else if (head == "joints") {
                m.joints = std::stoi(value);
            } else {
                fail("unknown manifest key '" + head + "'");
            }
        }
    }
    if (m.class_names.empty()) {
        throw IoError(IoError::Kind::bad_header, "manifest lists no classes: " + path.string());
    }
    for (const auto& r : m.records) {
        if (r.label < 0 || r.label >= static_cast<int>(m.class_names.size())) {
            throw IoError(IoError::Kind::bad_header,
                          "record label " + std::to_string(r.label) + " outside class list in " +
                              path.string());
        }
    }
    return m;
}

Dataset load_dataset(const std::filesystem::path& dir) {
    const auto manifest_path = dir / "manifest.txt";
    if (!std::filesystem::exists(manifest_path)) {
        throw IoError(IoError::Kind::io, "missing manifest: " + manifest_path.string());
    }
    Dataset ds;
    ds.manifest = load_manifest(manifest_path);
    ds.samples.reserve(ds.manifest.records.size());
    for (const auto& r : ds.manifest.records) {
        SkeletonSequence s = load_sequence(dir / r.path);
        if (s.channels() != ds.manifest.channels || s.joints() != ds.manifest.joints) {
            throw IoError(IoError::Kind::bad_header,
                          "sample " + r.path + " extents [C=" + std::to_string(s.channels()) +
                              ",N=" + std::to_string(s.joints()) +
                              "] disagree with manifest [C=" + std::to_string(ds.manifest.channels) +
                              ",N=" + std::to_string(ds.manifest.joints) + "]");
        }
        if (s.label != r.label) s.label = r.label;  // manifest is authoritative
        ds.samples.push_back(std::move(s));
    }
    return ds;
}

const std::vector<std::string>& synth_class_names() {
    static const std::vector<std::string> names = {"in_phase", "anti_phase", "converge", "diverge"};
    return names;
}

namespace {

std::array<double, 3> random_unit(Rng& rng) {
    while (true) {
        std::array<double, 3> v = {rng.normal(), rng.normal(), rng.normal()};
        const double norm = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
        if (norm > 1e-6) {
            for (double& x : v) x /= norm;
            return v;
        }
    }
}

}  // namespace

SkeletonSequence synth_generate(std::uint64_t seed, int class_id, int t0, int n) {
    if (class_id < 0 || class_id > 3) {
        throw std::invalid_argument("synth_generate: class_id must be in 0..3");
    }
    if (n < 4) throw std::invalid_argument("synth_generate: need at least 4 joints");
    if (t0 < 1) throw std::invalid_argument("synth_generate: need at least 1 frame");

    constexpr double kAmplitude = 1.2;
    constexpr double kGap = 2.0;
    constexpr double kDrift = 1.0;
    // pair center spread exceeds the half-gap so a single entity cannot
    // recover the entity-to-entity axis from its own position
    constexpr double kBaseSpread = 0.8;
    constexpr double kJointSpread = 0.25;
    constexpr double kJitter = 0.02;
    const double two_pi = 2.0 * std::numbers::pi;

    Rng rng(seed);

    // The draw order and count are fixed; the class only selects among the
    // drawn values, so entity 0 is identical across classes 0 and 1.
    const double theta = rng.uniform(0.0, two_pi);
    const int cycles = 2 + static_cast<int>(rng.below(2));  // 2 or 3 full periods
    // oscillation axis is shared by the whole dataset; the absolute phase
    // theta is what hides the relative phase from single-entity observers
    const std::array<double, 3> osc_dir = {0.36514837167011072, 0.54772255750516607,
                                           0.73029674334022143};  // (1,1.5,2)/|.|
    const std::array<double, 3> base0 = {kBaseSpread * rng.normal(), kBaseSpread * rng.normal(),
                                         kBaseSpread * rng.normal()};
    const auto gap_dir = random_unit(rng);
    const auto drift_raw0 = random_unit(rng);
    const double band_side = rng.uniform();

    std::vector<std::array<std::array<double, 3>, 2>> joint_offsets(static_cast<size_t>(n));
    for (int j = 0; j < n; ++j) {
        for (int e = 0; e < 2; ++e) {
            joint_offsets[static_cast<size_t>(j)][static_cast<size_t>(e)] = {
                kJointSpread * rng.normal(), kJointSpread * rng.normal(),
                kJointSpread * rng.normal()};
        }
    }

    // Relative phase: 0 / pi for the phase classes, quadrature (+-pi/2) for
    // the drift classes so no drift sample mimics either phase class.
    double delta = 0.0;
    if (class_id == 1) {
        delta = std::numbers::pi;
    } else if (class_id >= 2) {
        delta = band_side < 0.5 ? 0.5 * std::numbers::pi : 1.5 * std::numbers::pi;
    }

    // Drift: anti-aligned along the entity axis for converge/diverge; one
    // shared random direction for the phase classes, so their gap stays
    // constant. Magnitude is kDrift for every class.
    std::array<double, 3> drift0, drift1;
    if (class_id == 2) {
        drift0 = gap_dir;
        drift1 = {-gap_dir[0], -gap_dir[1], -gap_dir[2]};
    } else if (class_id == 3) {
        drift0 = {-gap_dir[0], -gap_dir[1], -gap_dir[2]};
        drift1 = gap_dir;
    } else {
        drift0 = drift_raw0;
        drift1 = drift_raw0;  // common translation: relative geometry is constant
    }

    Tensor data({2, 3, t0, n});
    const double omega = two_pi * cycles / t0;
    for (int e = 0; e < 2; ++e) {
        const double entity_phase = e == 0 ? theta : theta + delta;
        const auto& drift = e == 0 ? drift0 : drift1;
        for (int t = 0; t < t0; ++t) {
            const double osc = kAmplitude * std::sin(omega * t + entity_phase);
            const double ramp = t0 > 1 ? static_cast<double>(t) / (t0 - 1) : 0.0;
            const double side = e == 0 ? -0.5 : 0.5;  // gap split around the pair center
            for (int c = 0; c < 3; ++c) {
                const double center = base0[static_cast<size_t>(c)] +
                                      side * kGap * gap_dir[static_cast<size_t>(c)] +
                                      osc * osc_dir[static_cast<size_t>(c)] +
                                      kDrift * drift[static_cast<size_t>(c)] * ramp;
                for (int j = 0; j < n; ++j) {
                    data.at({e, c, t, j}) =
                        center +
                        joint_offsets[static_cast<size_t>(j)][static_cast<size_t>(e)]
                                     [static_cast<size_t>(c)];
                }
            }
        }
    }
    // jitter last so the stream position is class-independent
    for (std::int64_t i = 0; i < data.size(); ++i) data[i] += kJitter * rng.normal();

    return SkeletonSequence(std::move(data), class_id);
}

}  // namespace megc
