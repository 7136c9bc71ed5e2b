#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "doctest.h"
#include "olor/errors.hpp"
#include "olor/param_store.hpp"

using namespace olor;

namespace {

LayerParams make_layer(int index, const std::string& name, std::vector<double> values) {
    LayerParams layer;
    layer.layer_index = index;
    layer.name = name;
    layer.values = Eigen::Map<Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
    return layer;
}

ModelParams two_layer_model() {
    ModelParams model;
    model.layers.push_back(make_layer(0, "layer0", {1.0, -2.0, 0.5}));
    model.layers.push_back(make_layer(1, "layer1", {0.25, 4.0}));
    model.depth_norm = 1;
    return model;
}

bool bitwise_equal(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    return a.size() == b.size() &&
           std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())) == 0;
}

std::filesystem::path temp_file(const std::string& name) {
    return std::filesystem::temp_directory_path() / name;
}

}  // namespace

TEST_CASE("validation enforces the structural invariants") {
    CHECK_NOTHROW(validate(two_layer_model()));

    ModelParams empty;
    CHECK_THROWS_AS(validate(empty), ConfigError);

    ModelParams unordered = two_layer_model();
    unordered.layers[1].layer_index = 0;
    CHECK_THROWS_AS(validate(unordered), ConfigError);

    ModelParams out_of_range = two_layer_model();
    out_of_range.layers[1].layer_index = 5;
    CHECK_THROWS_AS(validate(out_of_range), ConfigError);

    ModelParams bad_ref = two_layer_model();
    bad_ref.layers[0].pretrained = Eigen::VectorXd::Zero(7);
    CHECK_THROWS_AS(validate(bad_ref), ConfigError);

    ModelParams non_finite = two_layer_model();
    non_finite.layers[0].values[1] = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(validate(non_finite), ConfigError);
}

TEST_CASE("snapshot deep-copies the current values") {
    ModelParams model = two_layer_model();
    snapshot_as_pretrained(model);
    REQUIRE(model.layers[0].pretrained.has_value());
    CHECK(bitwise_equal(*model.layers[0].pretrained, model.layers[0].values));

    model.layers[0].values[0] = 100.0;
    CHECK((*model.layers[0].pretrained)[0] == 1.0);
}

TEST_CASE("discrepancy norms are exact on hand-sized inputs") {
    ModelParams model = two_layer_model();
    snapshot_as_pretrained(model);
    CHECK(discrepancy_norm(model) == 0.0);

    // 3-4-5 triangle inside the first layer.
    model.layers[0].values[0] += 3.0;
    model.layers[0].values[1] += 4.0;
    CHECK(layer_discrepancy_norm(model.layers[0]) == 5.0);
    CHECK(discrepancy_norm(model) == 5.0);

    const std::vector<double> per_layer = discrepancy_norms_per_layer(model);
    REQUIRE(per_layer.size() == 2);
    CHECK(per_layer[0] == 5.0);
    CHECK(per_layer[1] == 0.0);
}

TEST_CASE("missing pretrained reference is reported with the layer name") {
    ModelParams model = two_layer_model();
    model.layers[0].pretrained = model.layers[0].values;
    try {
        discrepancy_norm(model);
        FAIL("expected ConfigError");
    } catch (const ConfigError& err) {
        CHECK(std::string(err.what()).find("layer1") != std::string::npos);
    }
}

TEST_CASE("checkpoints round-trip bit-for-bit") {
    ModelParams model;
    model.layers.push_back(make_layer(0, "layer0",
                                      {0.0, -0.0, 1.0, -1.0, 3.141592653589793,
                                       5e-324, -5e-324, 1.7976931348623157e308,
                                       2.2250738585072014e-308, 0.1}));
    model.layers.push_back(make_layer(1, "layer1", {-42.25, 1e-300}));
    model.depth_norm = 1;
    snapshot_as_pretrained(model);
    model.layers[0].values[2] = 0.30000000000000004;

    OptimizerState state;
    state.t = 1234;
    for (const LayerParams& layer : model.layers) {
        LayerOptState s;
        s.m = layer.values * 0.5;
        s.v = Eigen::VectorXd();  // SGD family keeps v empty
        s.d = layer.values - *layer.pretrained;
        state.layers.push_back(s);
    }

    Checkpoint original;
    original.model = model;
    original.optimizer_state = state;
    original.rng_seed = 0xDEADBEEFCAFEF00Dull;
    original.step = -7;

    const auto path = temp_file("olor_roundtrip.ckpt");
    save_checkpoint(path.string(), original);
    const Checkpoint loaded = load_checkpoint(path.string());

    CHECK(loaded.format_version == kCheckpointFormatVersion);
    CHECK(loaded.rng_seed == original.rng_seed);
    CHECK(loaded.step == original.step);
    CHECK(loaded.model.depth_norm == original.model.depth_norm);
    REQUIRE(loaded.model.layers.size() == original.model.layers.size());
    for (std::size_t k = 0; k < loaded.model.layers.size(); ++k) {
        const LayerParams& a = loaded.model.layers[k];
        const LayerParams& b = original.model.layers[k];
        CHECK(a.name == b.name);
        CHECK(a.layer_index == b.layer_index);
        CHECK(bitwise_equal(a.values, b.values));
        REQUIRE(a.pretrained.has_value());
        CHECK(bitwise_equal(*a.pretrained, *b.pretrained));
    }
    REQUIRE(loaded.optimizer_state.has_value());
    CHECK(loaded.optimizer_state->t == 1234);
    for (std::size_t k = 0; k < loaded.optimizer_state->layers.size(); ++k) {
        CHECK(bitwise_equal(loaded.optimizer_state->layers[k].m, state.layers[k].m));
        CHECK(loaded.optimizer_state->layers[k].v.size() == 0);
        CHECK(bitwise_equal(loaded.optimizer_state->layers[k].d, state.layers[k].d));
    }
    std::filesystem::remove(path);
}

TEST_CASE("checkpoints without optimizer state round-trip") {
    ModelParams model = two_layer_model();
    Checkpoint original;
    original.model = model;
    original.rng_seed = 5;
    original.step = 0;

    const auto path = temp_file("olor_no_state.ckpt");
    save_checkpoint(path.string(), original);
    const Checkpoint loaded = load_checkpoint(path.string());
    CHECK(!loaded.optimizer_state.has_value());
    CHECK(!loaded.model.layers[0].pretrained.has_value());
    CHECK(bitwise_equal(loaded.model.layers[1].values, model.layers[1].values));
    std::filesystem::remove(path);
}

TEST_CASE("unsupported format versions are rejected as such") {
    ModelParams model = two_layer_model();
    Checkpoint ckpt;
    ckpt.model = model;
    const auto path = temp_file("olor_version.ckpt");
    save_checkpoint(path.string(), ckpt);

    std::fstream file(path, std::ios::in | std::ios::out | std::ios::binary);
    file.seekp(16);  // the version digit right after "OLOR-CHECKPOINT "
    file.put('9');
    file.close();

    CHECK_THROWS_AS(load_checkpoint(path.string()), CheckpointVersionError);
    std::filesystem::remove(path);
}

TEST_CASE("truncated and garbage files are reported as corrupt") {
    ModelParams model = two_layer_model();
    Checkpoint ckpt;
    ckpt.model = model;
    const auto path = temp_file("olor_truncated.ckpt");
    save_checkpoint(path.string(), ckpt);

    const auto size = std::filesystem::file_size(path);
    std::filesystem::resize_file(path, size - 5);
    CHECK_THROWS_AS(load_checkpoint(path.string()), CheckpointCorruptError);

    std::ofstream garbage(path, std::ios::trunc);
    garbage << "not a checkpoint at all\n";
    garbage.close();
    CHECK_THROWS_AS(load_checkpoint(path.string()), CheckpointCorruptError);

    std::filesystem::remove(path);
    CHECK_THROWS_AS(load_checkpoint(path.string()), IoError);
}

TEST_CASE("non-finite payloads are refused on save and on load") {
    ModelParams model = two_layer_model();
    Checkpoint ckpt;
    ckpt.model = model;
    ckpt.model.layers[0].values[0] = std::numeric_limits<double>::infinity();
    const auto path = temp_file("olor_nonfinite.ckpt");
    CHECK_THROWS_AS(save_checkpoint(path.string(), ckpt), CheckpointValueError);

    // Write a healthy file, then stamp NaN bits over a known payload value.
    ckpt.model.layers[0].values[0] = 1967.25;
    save_checkpoint(path.string(), ckpt);

    std::ifstream in(path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();
    const double marker = 1967.25;
    std::uint64_t marker_bits;
    std::memcpy(&marker_bits, &marker, sizeof marker_bits);
    std::string needle(sizeof marker_bits, '\0');
    std::memcpy(needle.data(), &marker_bits, sizeof marker_bits);
    const auto at = bytes.find(needle);
    REQUIRE(at != std::string::npos);
    const std::uint64_t nan_bits = 0x7FF8000000000000ull;
    std::memcpy(bytes.data() + at, &nan_bits, sizeof nan_bits);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.close();

    CHECK_THROWS_AS(load_checkpoint(path.string()), CheckpointValueError);
    std::filesystem::remove(path);
}

TEST_CASE("checkpoint failure types stay within the io error category") {
    CHECK(exit_code_for(CheckpointVersionError("v")) == 4);
    CHECK(exit_code_for(CheckpointCorruptError("c")) == 4);
    CHECK(exit_code_for(CheckpointValueError("n")) == 4);
    CHECK(exit_code_for(ConfigError("c")) == 2);
    CHECK(exit_code_for(NumericError("n")) == 3);
    CHECK(exit_code_for(ScheduleIncompatibilityError("s")) == 3);
}
