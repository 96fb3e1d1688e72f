#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace rsgen::pipeline {

inline constexpr const char* kVersion = "0.1.0";
inline constexpr const char* kWorkspaceEnv = "RS_SYNTHGEN_WORKSPACE";
inline constexpr const char* kProvenanceFile = "provenance.jsonl";
inline constexpr const char* kLockFile = ".lock";

// Exit codes of run_command.
inline constexpr int kExitOk = 0;
inline constexpr int kExitStageFailure = 1;
inline constexpr int kExitConfigError = 2;
inline constexpr int kExitMissingArtifact = 3;

// Declarative pipeline configuration: an INI file with top-level `seed` and
// `workspace` keys and the sections [ingest], [finetune], [prompts],
// [generate], [fid], [downstream]. Values stay as text until a stage reads
// them; keys are checked up front.
struct PipelineConfig {
    std::uint64_t seed = 0;
    std::optional<std::filesystem::path> workspace;
    std::map<std::string, std::map<std::string, std::string>> sections;

    std::optional<std::string> get(const std::string& section, const std::string& key) const;
    std::string get_or(const std::string& section, const std::string& key, const std::string& fallback) const;
    long long get_int(const std::string& section, const std::string& key, long long fallback) const;
    double get_double(const std::string& section, const std::string& key, double fallback) const;
    bool get_bool(const std::string& section, const std::string& key, bool fallback) const;

    // Sets or replaces one value; "seed" and "workspace" with an empty
    // section address the globals. Throws ConfigError for unknown keys.
    void set(const std::string& section, const std::string& key, const std::string& value);

    // Config hash over the canonical JSON form.
    std::string hash() const;
};

// Known keys per section.
const std::map<std::string, std::set<std::string>>& known_keys();

// Throws ConfigError naming the offending section/key or line.
PipelineConfig parse_config(std::string_view ini_text);
PipelineConfig load_config(const std::filesystem::path& path);

// "Bare Land=52, Crop Land=57" -> map. Throws ConfigError.
std::map<std::string, int> parse_counts(std::string_view text);

// Exclusive per-workspace lock file. A lock left by a dead process is
// reclaimed. Throws StateError while another live process holds it.
class WorkspaceLock {
public:
    explicit WorkspaceLock(const std::filesystem::path& workspace);
    ~WorkspaceLock();
    WorkspaceLock(const WorkspaceLock&) = delete;
    WorkspaceLock& operator=(const WorkspaceLock&) = delete;

private:
    std::filesystem::path path_;
};

std::string usage();

// Runs one subcommand: prepare | stats | finetune | corpus | index | prompts |
// generate | fid | train-downstream | report. `args` excludes the program
// name. Returns the process exit code.
int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run_command(int argc, char** argv);

}  // namespace rsgen::pipeline
