#pragma once
// The saliency-forge command line: aggregate, evaluate, flip-compare,
// gen-noise and stub-oracle.

#include <iosfwd>
#include <string>
#include <vector>

#include "saliency_forge/run_config.hpp"

namespace saliency_forge {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitValidation = 2;
inline constexpr int kExitOracleUnavailable = 3;

// args excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run_cli(int argc, char** argv);

int cmd_aggregate(const RunConfig& config, std::ostream& out, std::ostream& err);
int cmd_evaluate(const RunConfig& config, std::ostream& out, std::ostream& err);
int cmd_flip_compare(const RunConfig& config, std::ostream& out, std::ostream& err);

struct NoiseRequest {
    std::size_t count = kDefaultNoiseMaps;
    std::size_t height = 0;  // taken from each stack when a manifest is given
    std::size_t width = 0;
};
int cmd_gen_noise(const RunConfig& config, const NoiseRequest& request, std::ostream& out,
                  std::ostream& err);

struct StubServerRequest {
    std::string host = "127.0.0.1";
    int port = 0;
    std::string model_name = "stub";
};
int cmd_stub_oracle(const RunConfig& config, const StubServerRequest& request, std::ostream& out,
                    std::ostream& err);

}  // namespace saliency_forge
