#include "olor/param_store.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "olor/errors.hpp"

namespace olor {

void validate(const ModelParams& model) {
    if (model.layers.empty()) {
        throw ConfigError("model: layer list is empty");
    }
    if (model.depth_norm < 1) {
        throw ConfigError("model: depth_norm must be >= 1, got " + std::to_string(model.depth_norm));
    }
    int prev_index = -1;
    for (const LayerParams& layer : model.layers) {
        if (layer.values.size() == 0) {
            throw ConfigError("model: layer '" + layer.name + "' has no values");
        }
        if (!layer.values.allFinite()) {
            throw ConfigError("model: layer '" + layer.name + "' has non-finite values");
        }
        if (layer.layer_index <= prev_index) {
            throw ConfigError("model: layer indices must be strictly increasing; layer '" +
                              layer.name + "' has index " + std::to_string(layer.layer_index) +
                              " after " + std::to_string(prev_index));
        }
        if (layer.layer_index < 0 || layer.layer_index > model.depth_norm) {
            throw ConfigError("model: layer '" + layer.name + "' index " +
                              std::to_string(layer.layer_index) + " outside [0, " +
                              std::to_string(model.depth_norm) + "]");
        }
        if (layer.pretrained && layer.pretrained->size() != layer.values.size()) {
            throw ConfigError("model: layer '" + layer.name + "' pretrained length " +
                              std::to_string(layer.pretrained->size()) + " != values length " +
                              std::to_string(layer.values.size()));
        }
        prev_index = layer.layer_index;
    }
}

void snapshot_as_pretrained(ModelParams& model) {
    for (LayerParams& layer : model.layers) {
        if (!layer.values.allFinite()) {
            throw NumericError("snapshot: layer '" + layer.name + "' has non-finite values");
        }
    }
    for (LayerParams& layer : model.layers) {
        layer.pretrained = layer.values;
    }
}

double layer_discrepancy_norm(const LayerParams& layer) {
    if (!layer.pretrained) {
        throw ConfigError("discrepancy: layer '" + layer.name + "' (index " +
                          std::to_string(layer.layer_index) + ") has no pretrained reference");
    }
    if (layer.pretrained->size() != layer.values.size()) {
        throw ConfigError("discrepancy: layer '" + layer.name + "' pretrained length mismatch");
    }
    return (layer.values - *layer.pretrained).norm();
}

double discrepancy_norm(const ModelParams& model) {
    double sum_sq = 0.0;
    for (const LayerParams& layer : model.layers) {
        const double norm = layer_discrepancy_norm(layer);
        sum_sq += norm * norm;
    }
    return std::sqrt(sum_sq);
}

std::vector<double> discrepancy_norms_per_layer(const ModelParams& model) {
    std::vector<double> norms;
    norms.reserve(model.layers.size());
    for (const LayerParams& layer : model.layers) {
        norms.push_back(layer.pretrained ? layer_discrepancy_norm(layer) : 0.0);
    }
    return norms;
}

// ---------------------------------------------------------------------------
// Checkpoint format.
//
// Text header (three lines, '\n' terminated):
//   OLOR-CHECKPOINT <format_version>
//   layers <count> depth_norm <n> seed <seed> step <step> optstate <0|1>
//   ---
// Binary body, all integers and doubles little-endian:
//   per layer: u32 name length, name bytes, i32 layer_index,
//              u64 count, count f64 values,
//              u8 has_pretrained, [u64 count, count f64]
//   optional optimizer state: i64 t, u32 layer count,
//              per layer three vectors (m, v, d), each u64 count + f64s
//   footer: u64 magic 0x21444E45524F4C4F ("OLOREND!")
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagicLine[] = "OLOR-CHECKPOINT";
constexpr std::uint64_t kFooterMagic = 0x21444E45524F4C4Full;
constexpr std::uint64_t kMaxVectorLength = 1ull << 30;  // corruption guard

template <typename T>
void write_le(std::ostream& out, T value) {
    static_assert(std::is_trivially_copyable_v<T>);
    std::array<unsigned char, sizeof(T)> bytes;
    std::memcpy(bytes.data(), &value, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) {
        std::reverse(bytes.begin(), bytes.end());
    }
    out.write(reinterpret_cast<const char*>(bytes.data()), sizeof(T));
}

template <typename T>
T read_le(std::istream& in) {
    static_assert(std::is_trivially_copyable_v<T>);
    std::array<unsigned char, sizeof(T)> bytes;
    in.read(reinterpret_cast<char*>(bytes.data()), sizeof(T));
    if (!in) {
        throw CheckpointCorruptError("checkpoint: unexpected end of file");
    }
    if constexpr (std::endian::native == std::endian::big) {
        std::reverse(bytes.begin(), bytes.end());
    }
    T value;
    std::memcpy(&value, bytes.data(), sizeof(T));
    return value;
}

void write_f64(std::ostream& out, double value) {
    write_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(value));
}

double read_f64(std::istream& in) {
    return std::bit_cast<double>(read_le<std::uint64_t>(in));
}

void write_vector(std::ostream& out, const Eigen::VectorXd& vec) {
    write_le<std::uint64_t>(out, static_cast<std::uint64_t>(vec.size()));
    for (Eigen::Index i = 0; i < vec.size(); ++i) {
        write_f64(out, vec[i]);
    }
}

Eigen::VectorXd read_vector(std::istream& in, const char* what, bool require_finite) {
    const std::uint64_t count = read_le<std::uint64_t>(in);
    if (count > kMaxVectorLength) {
        throw CheckpointCorruptError(std::string("checkpoint: implausible ") + what +
                                     " length " + std::to_string(count));
    }
    Eigen::VectorXd vec(static_cast<Eigen::Index>(count));
    for (Eigen::Index i = 0; i < vec.size(); ++i) {
        vec[i] = read_f64(in);
    }
    if (require_finite && !vec.allFinite()) {
        throw CheckpointValueError(std::string("checkpoint: non-finite ") + what + " payload");
    }
    return vec;
}

void check_finite_for_save(const Checkpoint& ckpt) {
    for (const LayerParams& layer : ckpt.model.layers) {
        if (!layer.values.allFinite() ||
            (layer.pretrained && !layer.pretrained->allFinite())) {
            throw CheckpointValueError("checkpoint: refusing to save non-finite layer '" +
                                       layer.name + "'");
        }
    }
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    check_finite_for_save(ckpt);
    validate(ckpt.model);
    if (ckpt.optimizer_state &&
        ckpt.optimizer_state->layers.size() != ckpt.model.layers.size()) {
        throw ConfigError("checkpoint: optimizer state has " +
                          std::to_string(ckpt.optimizer_state->layers.size()) +
                          " layers, model has " + std::to_string(ckpt.model.layers.size()));
    }

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("checkpoint: cannot open '" + path + "' for writing");
    }

    out << kMagicLine << ' ' << ckpt.format_version << '\n';
    out << "layers " << ckpt.model.layers.size() << " depth_norm " << ckpt.model.depth_norm
        << " seed " << ckpt.rng_seed << " step " << ckpt.step << " optstate "
        << (ckpt.optimizer_state ? 1 : 0) << '\n';
    out << "---\n";

    for (const LayerParams& layer : ckpt.model.layers) {
        write_le<std::uint32_t>(out, static_cast<std::uint32_t>(layer.name.size()));
        out.write(layer.name.data(), static_cast<std::streamsize>(layer.name.size()));
        write_le<std::int32_t>(out, layer.layer_index);
        write_vector(out, layer.values);
        write_le<std::uint8_t>(out, layer.pretrained ? 1 : 0);
        if (layer.pretrained) {
            write_vector(out, *layer.pretrained);
        }
    }

    if (ckpt.optimizer_state) {
        write_le<std::int64_t>(out, ckpt.optimizer_state->t);
        write_le<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.optimizer_state->layers.size()));
        for (const LayerOptState& s : ckpt.optimizer_state->layers) {
            write_vector(out, s.m);
            write_vector(out, s.v);
            write_vector(out, s.d);
        }
    }

    write_le<std::uint64_t>(out, kFooterMagic);
    out.flush();
    if (!out) {
        throw IoError("checkpoint: write to '" + path + "' failed");
    }
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("checkpoint: cannot open '" + path + "' for reading");
    }

    std::string magic_line;
    if (!std::getline(in, magic_line)) {
        throw CheckpointCorruptError("checkpoint: '" + path + "' is empty");
    }
    std::istringstream magic(magic_line);
    std::string tag;
    std::uint32_t version = 0;
    if (!(magic >> tag >> version) || tag != kMagicLine) {
        throw CheckpointCorruptError("checkpoint: '" + path + "' has no recognizable header");
    }
    if (version != kCheckpointFormatVersion) {
        throw CheckpointVersionError("checkpoint: format version " + std::to_string(version) +
                                     " unsupported (expected " +
                                     std::to_string(kCheckpointFormatVersion) + ")");
    }

    std::string meta_line;
    if (!std::getline(in, meta_line)) {
        throw CheckpointCorruptError("checkpoint: missing metadata line");
    }
    std::istringstream meta(meta_line);
    std::string k_layers, k_depth, k_seed, k_step, k_opt;
    std::uint64_t layer_count = 0;
    int depth_norm = 0;
    std::uint64_t seed = 0;
    std::int64_t step = 0;
    int has_opt = 0;
    if (!(meta >> k_layers >> layer_count >> k_depth >> depth_norm >> k_seed >> seed >> k_step >>
          step >> k_opt >> has_opt) ||
        k_layers != "layers" || k_depth != "depth_norm" || k_seed != "seed" ||
        k_step != "step" || k_opt != "optstate") {
        throw CheckpointCorruptError("checkpoint: malformed metadata line '" + meta_line + "'");
    }
    if (layer_count == 0 || layer_count > 4096) {
        throw CheckpointCorruptError("checkpoint: implausible layer count " +
                                     std::to_string(layer_count));
    }

    std::string separator;
    if (!std::getline(in, separator) || separator != "---") {
        throw CheckpointCorruptError("checkpoint: missing header separator");
    }

    Checkpoint ckpt;
    ckpt.format_version = version;
    ckpt.model.depth_norm = depth_norm;
    ckpt.rng_seed = seed;
    ckpt.step = step;

    ckpt.model.layers.resize(layer_count);
    for (LayerParams& layer : ckpt.model.layers) {
        const std::uint32_t name_len = read_le<std::uint32_t>(in);
        if (name_len > 4096) {
            throw CheckpointCorruptError("checkpoint: implausible layer name length " +
                                         std::to_string(name_len));
        }
        layer.name.resize(name_len);
        in.read(layer.name.data(), name_len);
        if (!in) {
            throw CheckpointCorruptError("checkpoint: truncated layer name");
        }
        layer.layer_index = read_le<std::int32_t>(in);
        layer.values = read_vector(in, "values", true);
        const std::uint8_t has_pre = read_le<std::uint8_t>(in);
        if (has_pre > 1) {
            throw CheckpointCorruptError("checkpoint: bad pretrained flag");
        }
        if (has_pre == 1) {
            layer.pretrained = read_vector(in, "pretrained values", true);
        }
    }

    if (has_opt == 1) {
        OptimizerState state;
        state.t = read_le<std::int64_t>(in);
        const std::uint32_t opt_layers = read_le<std::uint32_t>(in);
        if (opt_layers != layer_count) {
            throw CheckpointCorruptError("checkpoint: optimizer state layer count " +
                                         std::to_string(opt_layers) + " != model layer count " +
                                         std::to_string(layer_count));
        }
        state.layers.resize(opt_layers);
        for (LayerOptState& s : state.layers) {
            s.m = read_vector(in, "optimizer m", true);
            s.v = read_vector(in, "optimizer v", true);
            s.d = read_vector(in, "optimizer d", true);
        }
        ckpt.optimizer_state = std::move(state);
    } else if (has_opt != 0) {
        throw CheckpointCorruptError("checkpoint: bad optimizer state flag " +
                                     std::to_string(has_opt));
    }

    const std::uint64_t footer = read_le<std::uint64_t>(in);
    if (footer != kFooterMagic) {
        throw CheckpointCorruptError("checkpoint: bad footer (file truncated or corrupted)");
    }

    try {
        validate(ckpt.model);
    } catch (const ConfigError& err) {
        throw CheckpointValueError("checkpoint: loaded model invalid: " + std::string(err.what()));
    }
    return ckpt;
}

}  // namespace olor
