#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "bemtta/eval.hpp"
#include "bemtta/verify.hpp"

namespace bemtta {

// Invalid experiment configuration; line is 1-based when the error came
// from a config file, 0 otherwise.
struct ConfigError : std::runtime_error {
  int line = 0;
  std::string field;
  ConfigError(const std::string& message, int line_no = 0,
              std::string field_name = "");
};

// Malformed embedding file; offset is the byte position the error was
// detected at.
struct FormatError : std::runtime_error {
  std::size_t offset = 0;
  FormatError(const std::string& message, std::size_t byte_offset);
};

struct ExperimentConfig {
  WorldConfig world;
  AdaptationConfig adaptation;  // shared by every method in `methods`
  std::vector<Method> methods = {Method::no_adapt, Method::vanilla_em,
                                 Method::bem_full, Method::bce_baseline};
  int dataset_size = 500;
  std::string out_prefix = "report";
  std::string init_context_path;  // optional prompt-context import
};

// Flat `key = value` config text; '#' starts a comment, unknown or
// duplicate keys are errors. Every key is optional: empty text yields the
// default configuration.
ExperimentConfig parse_config_text(const std::string& text);
ExperimentConfig load_config_file(const std::filesystem::path& path);
void validate_config(const ExperimentConfig& config);

// Stable key order, canonical number formatting; digest input and the
// config echo embedded in reports.
std::string canonical_config_text(const ExperimentConfig& config);
std::string config_digest(const ExperimentConfig& config);  // 16 hex chars

// Commented starting-point config covering every key at its default.
std::string default_config_template();

// ---------------------------------------------------------------------------
// Embedding interchange format
//
//   magic   8 bytes  "BEMTTA1\0"
//   count   u32 LE
//   dim     u32 LE
//   kind    u8       0 anchors, 1 captions, 2 instances, 3 context
//   payload count*dim little-endian IEEE-754 binary32, row-major
//   labels  (captions/instances only) per record: u16 LE count,
//           then that many u16 LE class indices
// ---------------------------------------------------------------------------

enum class PayloadKind : std::uint8_t {
  anchors = 0,
  captions = 1,
  instances = 2,
  context = 3,
};

bool kind_has_labels(PayloadKind kind);
const char* kind_name(PayloadKind kind);

struct EmbeddingFile {
  PayloadKind kind = PayloadKind::anchors;
  std::uint32_t count = 0;
  std::uint32_t dim = 0;
  std::vector<float> data;  // count * dim
  std::vector<std::vector<std::uint16_t>> label_sets;
};

std::vector<std::uint8_t> serialize_embedding_file(const EmbeddingFile& file);
EmbeddingFile parse_embedding_bytes(std::span<const std::uint8_t> bytes);
EmbeddingFile read_embedding_file(const std::filesystem::path& path);
void write_embedding_file(const std::filesystem::path& path,
                          const EmbeddingFile& file);

EmbeddingFile embedding_from_anchors(const LabelSpace& space);
EmbeddingFile embedding_from_captions(const CaptionBase& base);
EmbeddingFile embedding_from_instances(const std::vector<Instance>& instances);
EmbeddingFile embedding_from_contexts(const PromptInit& init);

LabelSpace label_space_from_embedding(const EmbeddingFile& file);
CaptionBase caption_base_from_embedding(const EmbeddingFile& file);
std::vector<Instance> instances_from_embedding(const EmbeddingFile& file);
// one record initializes both prompts, two records initialize view then
// caption
PromptInit contexts_from_embedding(const EmbeddingFile& file);

// ---------------------------------------------------------------------------
// Reports. The structured report is deterministic byte-for-byte for a
// given config (runtimes live only in the CSV table and the log).
// ---------------------------------------------------------------------------

std::string report_json(const ExperimentConfig& config,
                        const std::vector<EvalReport>& reports);
// header: method,map,map_1_2,map_3_4,map_5_7,map_8p,runtime_s
std::string report_csv(const std::vector<EvalReport>& reports);

std::string trace_text(const ExperimentConfig& config, Method method,
                       int instance_index, const Instance& instance,
                       const AdaptationOutcome& before,
                       const AdaptationOutcome& after);

// ---------------------------------------------------------------------------
// Command entry points behind the CLI. Exit codes: 0 success, 1 runtime
// failure, 2 invalid configuration or input file.
// ---------------------------------------------------------------------------

int cmd_run(const ExperimentConfig& config,
            const std::filesystem::path& out_dir, int jobs,
            std::ostream& log);
int cmd_trace(const ExperimentConfig& config, int instance_index,
              Method method, const std::filesystem::path& out_dir,
              std::ostream& log);
int cmd_export(const ExperimentConfig& config, const std::string& what,
               const std::filesystem::path& file, std::ostream& log);
int cmd_import(const std::filesystem::path& file,
               const std::optional<std::filesystem::path>& reexport,
               std::ostream& log);

}  // namespace bemtta
