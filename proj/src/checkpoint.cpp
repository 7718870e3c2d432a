#include "chromareg/checkpoint.hpp"

#include "chromareg/io.hpp"

#include <filesystem>
#include <sstream>

namespace chromareg {

namespace {

constexpr char kMagic[] = "CHRCKPT";

std::string shape_of(const ad::Matrix& m) {
    return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

void write_moments(BinaryWriter& w, const std::map<std::string, ad::Matrix>& moments) {
    w.u64(moments.size());
    for (const auto& [name, m] : moments) {
        w.str(name);
        w.matrix(m);
    }
}

std::map<std::string, ad::Matrix> read_moments(BinaryReader& r) {
    std::map<std::string, ad::Matrix> out;
    const std::uint64_t n = r.u64();
    for (std::uint64_t i = 0; i < n; ++i) {
        std::string name = r.str();
        const Eigen::MatrixXd m = r.matrix();
        out.emplace(std::move(name), ad::Matrix(m));
    }
    return out;
}

}  // namespace

void save_checkpoint(const std::string& path, const RunConfig& config, const RegistrationModel& model,
                     const nn::AdamState& optimizer, long long step) {
    const std::string tmp = path + ".partial";
    try {
        BinaryWriter w(tmp);
        w.str(kMagic);
        w.u64(kCheckpointFormatVersion);
        w.str(serialize_config(config));
        w.i64(step);
        const auto& params = model.parameters().all();
        w.u64(params.size());
        for (const auto& [name, v] : params) {
            w.str(name);
            w.u64(model.parameters().trainable(name) ? 1 : 0);
            w.matrix(v.value());
        }
        w.i64(optimizer.step);
        write_moments(w, optimizer.m);
        write_moments(w, optimizer.v);
        w.close();
    } catch (const IoError& e) {
        std::error_code ec;
        std::filesystem::remove(tmp, ec);
        throw CheckpointError(std::string("checkpoint write failed: ") + e.what());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw CheckpointError("checkpoint write failed: cannot move into " + path + ": " + ec.message());
}

Checkpoint load_checkpoint(const std::string& path) {
    try {
        BinaryReader r(path);
        if (r.str() != kMagic) throw CheckpointError("not a checkpoint: " + path);
        Checkpoint c;
        c.version = r.u64();
        if (c.version != kCheckpointFormatVersion)
            throw CheckpointError("checkpoint " + path + " has format version " + std::to_string(c.version) +
                                  ", expected " + std::to_string(kCheckpointFormatVersion));
        c.config = parse_config(r.str());
        c.step = r.i64();
        const std::uint64_t n = r.u64();
        for (std::uint64_t i = 0; i < n; ++i) {
            std::string name = r.str();
            c.trainable[name] = r.u64() != 0;
            c.parameters.emplace(std::move(name), ad::Matrix(r.matrix()));
        }
        c.optimizer.step = r.i64();
        c.optimizer.m = read_moments(r);
        c.optimizer.v = read_moments(r);
        return c;
    } catch (const IoError& e) {
        throw CheckpointError(std::string("cannot read checkpoint: ") + e.what());
    } catch (const ConfigError& e) {
        throw CheckpointError("checkpoint " + path + " has an invalid embedded config: " + e.what());
    }
}

void apply_checkpoint(const Checkpoint& checkpoint, RegistrationModel& model) {
    const ModelConfig& have = model.config();
    const ModelConfig& want = checkpoint.config.model;
    if (!(have.network == want.network)) {
        std::ostringstream msg;
        msg << "checkpoint network config differs from the model config";
        const NetworkConfig a = have.network.effective();
        const NetworkConfig b = want.network.effective();
        if (a.image_coarse != b.image_coarse) msg << " (image_coarse " << b.image_coarse << " vs " << a.image_coarse << ")";
        if (a.point_coarse != b.point_coarse) msg << " (point_coarse " << b.point_coarse << " vs " << a.point_coarse << ")";
        if (a.toy != b.toy) msg << " (toy " << b.toy << " vs " << a.toy << ")";
        if (a.fusion_enabled != b.fusion_enabled) msg << " (fusion_enabled " << b.fusion_enabled << " vs " << a.fusion_enabled << ")";
        throw CheckpointError(msg.str());
    }
    if (!(have.transformer == want.transformer))
        throw CheckpointError("checkpoint transformer config differs from the model config");
    nn::ParameterStore& store = model.parameters();
    for (const auto& [name, v] : store.all()) {
        const auto it = checkpoint.parameters.find(name);
        if (it == checkpoint.parameters.end()) throw CheckpointError("checkpoint is missing parameter " + name);
        if (it->second.rows() != v.rows() || it->second.cols() != v.cols())
            throw CheckpointError("parameter " + name + " has shape " + shape_of(it->second) + " in the checkpoint but " +
                                  shape_of(v.value()) + " in the model");
    }
    for (const auto& [name, m] : checkpoint.parameters)
        if (!store.contains(name)) throw CheckpointError("checkpoint has unexpected parameter " + name);
    for (const auto& [name, m] : checkpoint.parameters) {
        Var v = store.get(name);
        v.mutable_value() = m;
        const auto t = checkpoint.trainable.find(name);
        if (t != checkpoint.trainable.end()) store.set_trainable(name, t->second);
    }
}

}  // namespace chromareg
