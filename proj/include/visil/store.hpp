#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "visil/training.hpp"

namespace visil {

inline constexpr std::uint32_t kFeatureVersion = 1;
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::uint64_t fnv1a64(std::span<const std::byte> bytes);

/// VSLF: raw per-frame activation stacks. Every frame must share the same
/// layer shapes. Frame timestamps are not stored; frame x reads back as x s.
void write_features(const std::filesystem::path& path, std::span<const FeatureMapStack> frames);
std::vector<FeatureMapStack> read_features(const std::filesystem::path& path);

/// Region descriptors as a single-layer VSLF with H = W = N.
void write_descriptors(const std::filesystem::path& path, const VideoTensorf& video);
VideoTensorf read_descriptors(const std::filesystem::path& path, std::string id);

struct SegmentAnnotation {
    std::string peer;
    Interval self;   // span in this video
    Interval other;  // aligned span in the peer
};

struct ManifestRecord {
    std::string id;
    std::filesystem::path features;  // resolved
    double duration = 0.0;
    std::vector<SegmentAnnotation> segments;
    std::vector<std::string> relevant;  // labels when this record is a query
    bool query = false;
    std::size_t line = 0;
};

struct DatasetManifest {
    std::vector<ManifestRecord> records;

    /// Position of `id`, or nullopt.
    std::optional<std::size_t> find(const std::string& id) const;
};

/// One JSON object per line; blank lines are skipped. Relative feature paths
/// resolve against `data_dir` when given, else the manifest's directory.
DatasetManifest load_manifest(const std::filesystem::path& path,
                              const std::optional<std::filesystem::path>& data_dir = std::nullopt);
/// Paths are written as given relative to `base` when possible.
void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest,
                    const std::filesystem::path& base);

/// Descriptor files of every record plus deduplicated annotated pairs.
TrainingSet load_training_set(const DatasetManifest& manifest);

struct Checkpoint {
    TrainingConfig config;
    TrainState state;
};

bool operator==(const Checkpoint& a, const Checkpoint& b);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Writes `bytes` to a sibling temporary file and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::byte> bytes);
std::vector<std::byte> read_file(const std::filesystem::path& path);

}  // namespace visil
