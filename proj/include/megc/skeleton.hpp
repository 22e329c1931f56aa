#pragma once

#include "megc/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace megc {

/// Errors raised by the binary/manifest readers, one kind per failure mode.
class IoError : public std::runtime_error {
  public:
    enum class Kind { magic_mismatch, truncated, extent_overflow, bad_header, io };

    IoError(Kind kind_, const std::string& what) : std::runtime_error(what), kind(kind_) {}
    Kind kind;
};

/// One labeled two-entity sample: data laid out [2, C0, T0, N].
struct SkeletonSequence {
    Tensor data;
    int label = 0;

    SkeletonSequence() = default;
    SkeletonSequence(Tensor data_, int label_);

    int entities() const { return data.extent(0); }
    int channels() const { return data.extent(1); }
    int frames() const { return data.extent(2); }
    int joints() const { return data.extent(3); }

    double& at(int e, int c, int t, int n) { return data.at({e, c, t, n}); }
    double at(int e, int c, int t, int n) const { return data.at({e, c, t, n}); }
};

/// Removes global movement: per entity, subtracts that entity's ref joint
/// position in frame 0 from every frame.
SkeletonSequence center_sequence(const SkeletonSequence& s, int ref_joint);

/// Linear interpolation of the frame axis onto t_target uniform sample
/// points spanning [0, T0-1]; endpoints are preserved exactly.
SkeletonSequence resize_temporal(const SkeletonSequence& s, int t_target);

// MEGCSKL1 container: 8-byte magic, little-endian u32 {entities, C0, T0, N,
// label}, then the payload as little-endian f64 in [e,c,t,n] row-major
// order. save/load round-trips bit-exactly.
void save_sequence(const SkeletonSequence& s, const std::filesystem::path& path);
SkeletonSequence load_sequence(const std::filesystem::path& path);

struct ManifestRecord {
    std::string path;  // relative to the manifest's directory
    int label = 0;
};

struct DatasetManifest {
    std::vector<std::string> class_names;
    std::string preset;
    int channels = 0;
    int joints = 0;
    std::vector<ManifestRecord> records;
};

void save_manifest(const DatasetManifest& m, const std::filesystem::path& path);
DatasetManifest load_manifest(const std::filesystem::path& path);

struct Dataset {
    DatasetManifest manifest;
    std::vector<SkeletonSequence> samples;
};

/// Reads `dir`/manifest.txt and every sample it lists, checking that all
/// samples share the manifest's channel and joint extents.
Dataset load_dataset(const std::filesystem::path& dir);

/// Class names of the synthetic four-class relative-motion set.
const std::vector<std::string>& synth_class_names();

/// Deterministic synthetic two-entity action. Each entity's marginal motion
/// statistics are identical across all four classes; the label is encoded
/// only in the cross-entity relationship:
///   0 in_phase    - entities oscillate with relative phase 0
///   1 anti_phase  - relative phase pi
///   2 converge    - entities drift toward each other (relative phase in a
///                   quadrature band)
///   3 diverge     - entities drift apart (quadrature band)
/// Classes 0/1 drift in a random direction perpendicular to the entity-to-
/// entity axis, so drift magnitude and direction are marginally uniform in
/// every class. With the same seed, class 0 and class 1 differ only in the
/// second entity's oscillation phase.
SkeletonSequence synth_generate(std::uint64_t seed, int class_id, int t0, int n);

}  // namespace megc
