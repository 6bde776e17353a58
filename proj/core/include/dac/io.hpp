#pragma once

// File formats. Data files are line-delimited JSON with a versioned header
// line carrying the run id and config hash; every write is atomic
// (write-then-rename). Readers validate the format tag and version.

#include <optional>
#include <string>
#include <vector>

#include "dac/synthetic.hpp"
#include "dac/trajectory.hpp"

namespace dac {

struct FileHeader {
    std::string format;
    int version = 1;
    std::string run_id;
    std::string config_hash;
};

inline constexpr int kTrajectoryFormatVersion = 1;
inline constexpr int kGroundTruthFormatVersion = 1;
inline constexpr int kBinsFormatVersion = 1;
inline constexpr int kSplitFormatVersion = 1;

void atomic_write_text(const std::string& path, const std::string& content);
std::string read_text_file(const std::string& path);

// Trajectories: header line {"format":"dac.trajectories",...} followed by
// one patient record per line.
std::string serialize_trajectories(const std::vector<PatientTrajectory>& cohort,
                                   const FileHeader& header);
void write_trajectories(const std::string& path, const std::vector<PatientTrajectory>& cohort,
                        const FileHeader& header);
std::vector<PatientTrajectory> read_trajectories(const std::string& path,
                                                 FileHeader* header = nullptr);

// Ground-truth sidecar keyed by patient_id, plus the generator coefficients
// in the header record.
void write_ground_truth(const std::string& path, const SyntheticGroundTruth& truth,
                        const std::vector<std::string>& patient_ids, const FileHeader& header);
SyntheticGroundTruth read_ground_truth(const std::string& path,
                                       std::vector<std::string>* patient_ids = nullptr,
                                       FileHeader* header = nullptr);

// Value-bin edges with the requested V.
void write_value_bins(const std::string& path, const ValueBins& bins, const FileHeader& header);
ValueBins read_value_bins(const std::string& path, FileHeader* header = nullptr);

// Fold assignments.
void write_split(const std::string& path, const CohortSplit& split, const FileHeader& header);
CohortSplit read_split(const std::string& path, FileHeader* header = nullptr);

}  // namespace dac
