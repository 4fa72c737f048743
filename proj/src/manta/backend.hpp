#pragma once

#include "manta/workflow.hpp"

#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace manta {

struct GeneratedImage {
    std::vector<std::uint8_t> bytes;
    std::int64_t seed_used = 0;
    std::optional<std::vector<double>> feature_vector;  // stub backend only

    bool operator==(const GeneratedImage&) const = default;
};

enum class BackendMode { http, stub };

struct BackendConfig {
    BackendMode mode = BackendMode::stub;
    std::string base_url;               // http mode, e.g. "http://127.0.0.1:7860"
    double model_switch_timeout = 120;  // seconds
    double request_timeout = 600;       // seconds
    int steps = 20;
    std::size_t stub_feature_dimension = 16;

    void validate() const;
};

class GenerationBackend {
public:
    virtual ~GenerationBackend() = default;

    virtual std::vector<GeneratedImage> txt2img(const GenerationWorkflow& w) = 0;
    virtual std::vector<GeneratedImage> img2img(const GeneratedImage& image, const GenerationWorkflow& w,
                                                double denoise) = 0;
    virtual void set_checkpoint(const std::string& checkpoint_id) = 0;
};

std::unique_ptr<GenerationBackend> make_backend(const BackendConfig& cfg);

/// Deterministic stand-in for an image service.
///
/// Each image carries a feature vector: a per-workflow base point plus a
/// per-image offset of length sigma(cfg). sigma blends the checkpoint's own
/// variance (dominant at low cfg) with variance carried by the prompt
/// (dominant at high cfg, proportional to how many fragments the prompt has):
///     sigma(cfg) = (7 * kModelVariance + kPromptVariance * r * cfg) / (cfg + 7)
/// with r = min(1, fragments / 12). Offset directions do not depend on cfg, so
/// batch spread scales exactly with sigma.
class StubBackend final : public GenerationBackend {
public:
    static constexpr double kModelVariance = 0.5;
    static constexpr double kPromptVariance = 1.0;
    static constexpr std::size_t kRichPromptFragments = 12;

    explicit StubBackend(std::size_t feature_dimension = 16) : dimension_(feature_dimension) {}

    std::vector<GeneratedImage> txt2img(const GenerationWorkflow& w) override;
    std::vector<GeneratedImage> img2img(const GeneratedImage& image, const GenerationWorkflow& w,
                                        double denoise) override;
    void set_checkpoint(const std::string&) override {}

    static double prompt_richness(std::string_view positive_prompt);
    static double spread(double cfg_scale, double richness);

    /// 32x32 binary PPM whose pixels are a function of the features.
    static std::vector<std::uint8_t> render(std::span<const double> features, std::int64_t seed);

private:
    std::size_t dimension_;
    std::mutex mutex_;
};

/// Client for the Automatic1111 web API (/sdapi/v1/...). One request in flight at a time.
class HttpBackend final : public GenerationBackend {
public:
    explicit HttpBackend(BackendConfig cfg);

    std::vector<GeneratedImage> txt2img(const GenerationWorkflow& w) override;
    std::vector<GeneratedImage> img2img(const GeneratedImage& image, const GenerationWorkflow& w,
                                        double denoise) override;
    void set_checkpoint(const std::string& checkpoint_id) override;

private:
    void ensure_checkpoint(const std::string& checkpoint_id);
    void switch_checkpoint(const std::string& checkpoint_id);
    std::vector<GeneratedImage> generate(const std::string& route, const nlohmann::json& body,
                                         std::int64_t seed);

    BackendConfig cfg_;
    std::mutex mutex_;
    std::optional<std::string> current_checkpoint_;
};

/// Mean pairwise Euclidean distance between feature vectors; 0 for fewer than two.
double mean_pairwise_distance(std::span<const GeneratedImage> images);

} // namespace manta
