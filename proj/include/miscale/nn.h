#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "miscale/dataset.h"

namespace miscale::nn {

enum class Activation { None, ReLU, Sigmoid };

const char* to_string(Activation a);
Activation activation_from_string(const std::string& s);

/// Per-sample tensor geometry. Features are stored height-major, channel
/// fastest, matching the Dataset grid layout.
struct Shape3 {
    std::size_t height = 1;
    std::size_t width = 1;
    std::size_t channels = 1;

    std::size_t size() const { return height * width * channels; }
    bool operator==(const Shape3&) const = default;
};

enum class LayerKind { Dense, Conv2d, MaxPool2d, Dropout, Flatten };

const char* to_string(LayerKind k);

/// Declarative description of one layer. Fields unused by a kind are ignored.
struct LayerSpec {
    LayerKind kind = LayerKind::Dense;
    std::size_t in = 0, out = 0;                    // dense widths
    std::size_t out_channels = 0;                   // conv
    std::size_t kernel_h = 1, kernel_w = 1;         // conv / pool window
    std::size_t stride = 1, padding = 0;            // conv
    Activation activation = Activation::None;
    double rate = 0.0;                              // dropout
    std::optional<Matrix> mask;                     // dense (in x out) or conv (kh*kw*cin x cout)

    static LayerSpec dense(std::size_t in, std::size_t out, Activation act = Activation::None);
    static LayerSpec conv2d(std::size_t out_channels, std::size_t kh, std::size_t kw, Activation act = Activation::None,
                            std::size_t stride = 1, std::size_t padding = 0);
    static LayerSpec maxpool2d(std::size_t kh, std::size_t kw);
    static LayerSpec dropout(double rate);
    static LayerSpec flatten();
};

struct NetworkSpec {
    Shape3 input;
    std::vector<LayerSpec> layers;
    std::uint64_t init_seed = 0;
};

struct Parameter {
    Matrix value;
    Matrix grad;
};

class Layer {
public:
    virtual ~Layer() = default;

    virtual Matrix forward(const Matrix& in, bool train, std::mt19937_64& rng) = 0;
    /// Stateless evaluation-mode pass.
    virtual Matrix infer(const Matrix& in) const = 0;
    /// Consumes dL/d(output) from the last forward; accumulates parameter
    /// gradients and returns dL/d(input).
    virtual Matrix backward(const Matrix& grad_out) = 0;

    virtual std::vector<Parameter*> parameters() { return {}; }
    virtual LayerKind kind() const = 0;

    Shape3 in_shape;
    Shape3 out_shape;
    /// When set, backward may return an empty matrix instead of dL/d(input).
    bool skip_input_grad = false;
};

class Network {
public:
    explicit Network(NetworkSpec spec);
    Network(const Network& other);
    Network& operator=(const Network& other);
    Network(Network&&) noexcept = default;
    Network& operator=(Network&&) noexcept = default;

    /// batch is (samples x input features). Dropout draws from a generator
    /// seeded with rng_seed so a given (batch, seed) is reproducible.
    Matrix forward(const Matrix& batch, bool train, std::uint64_t rng_seed = 0);
    Matrix predict(const Matrix& batch) const;

    /// Requires a preceding forward. Parameter gradients are overwritten, not
    /// summed across calls. Returns dL/d(input), or an empty matrix when
    /// input_grad is false (saves the first layer's input pass in training).
    Matrix backward(const Matrix& upstream_grad, bool input_grad = true);

    std::vector<Parameter*> parameters();
    std::size_t parameter_count() const;
    void zero_grad();

    const NetworkSpec& spec() const { return spec_; }
    const Layer& layer(std::size_t i) const { return *layers_[i]; }
    std::size_t depth() const { return layers_.size(); }
    Shape3 output_shape() const;

    /// JSON descriptor beside a little-endian f64 parameter blob.
    void save(const std::filesystem::path& descriptor, const std::filesystem::path& blob,
              const std::map<std::string, std::string>& extra = {}) const;
    static Network load(const std::filesystem::path& descriptor, const std::filesystem::path& blob);

private:
    void build();

    NetworkSpec spec_;
    std::vector<std::unique_ptr<Layer>> layers_;
    bool has_forward_ = false;
};

struct AdamState {
    double learning_rate = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::uint64_t step = 0;
    std::vector<Matrix> m;
    std::vector<Matrix> v;
};

/// Bias-corrected Adam update of every parameter from its grad buffer.
void adam_step(AdamState& state, const std::vector<Parameter*>& params);

struct GradCheckResult {
    std::string layer;
    double max_rel_error = 0.0;
    std::size_t checked = 0;
};

/// Central finite differences (step h) against backward() on every
/// parameter and input coordinate of a small network built around each
/// layer kind.
std::vector<GradCheckResult> gradient_check_suite(std::uint64_t seed, double h = 1e-5);

/// Same check for an arbitrary network on one batch, with objective
/// sum(output .* probe) for a random probe.
GradCheckResult gradient_check(Network& net, const Matrix& batch, std::uint64_t seed, double h = 1e-5,
                               std::size_t max_coords = 400);

} // namespace miscale::nn
