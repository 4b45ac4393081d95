// Copyright (C) 2026 flowsr contributors
// SPDX-License-Identifier: Apache-2.0

#include "flowsr/checkpoint.hpp"

#include <algorithm>
#include <cstring>
#include <filesystem>
#include <fstream>

namespace flowsr {

namespace fs = std::filesystem;

namespace {

constexpr uint64_t kFnvOffset = 1469598103934665603ULL;
constexpr uint64_t kFnvPrime = 1099511628211ULL;

uint64_t fnv1a(const void* data, size_t bytes, uint64_t h = kFnvOffset) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < bytes; ++i) {
        h ^= p[i];
        h *= kFnvPrime;
    }
    return h;
}

Json vnet_config_to_json(const VelocityNetConfig<double>& c) {
    return Json{{"latent_channels", c.latent_channels}, {"width", c.width},
                {"blocks", c.blocks},                   {"emb_dim", c.emb_dim},
                {"num_classes", c.num_classes},         {"zero_init_out", c.zero_init_out}};
}

VelocityNetConfig<double> vnet_config_from_json(const Json& j) {
    VelocityNetConfig<double> c;
    c.latent_channels = j.at("latent_channels");
    c.width = j.at("width");
    c.blocks = j.at("blocks");
    c.emb_dim = j.at("emb_dim");
    c.num_classes = j.at("num_classes");
    c.zero_init_out = j.at("zero_init_out");
    return c;
}

}  // namespace

uint64_t params_checksum(const std::vector<Param<double>*>& params) {
    uint64_t h = kFnvOffset;
    for (const auto* p : params)
        h = fnv1a(p->w.v.data(), p->w.v.size() * sizeof(double), h);
    return h;
}

void save_param_groups(const std::string& dir, const std::vector<ParamGroup>& groups,
                       Json& manifest) {
    fs::create_directories(dir);
    Json jgroups = Json::array();
    for (const auto& group : groups) {
        const std::string file = group.name + ".bin";
        std::ofstream out(dir + "/" + file, std::ios::binary);
        if (!out) throw_runtime("save_param_groups: cannot open " + dir + "/" + file);
        Json jparams = Json::array();
        uint64_t hash = kFnvOffset;
        for (const auto* p : group.params) {
            std::vector<float> f32(p->w.size());
            for (size_t i = 0; i < f32.size(); ++i) f32[i] = static_cast<float>(p->w.v[i]);
            out.write(reinterpret_cast<const char*>(f32.data()),
                      static_cast<std::streamsize>(f32.size() * sizeof(float)));
            hash = fnv1a(f32.data(), f32.size() * sizeof(float), hash);
            jparams.push_back(Json{{"name", p->name},
                                   {"shape", {p->w.n, p->w.c, p->w.h, p->w.w}},
                                   {"count", p->w.size()}});
        }
        jgroups.push_back(Json{{"name", group.name},
                               {"file", file},
                               {"dtype", "float32le"},
                               {"checksum", hash},
                               {"params", jparams}});
    }
    manifest["groups"] = jgroups;
}

void load_param_groups(const std::string& dir, const std::vector<ParamGroup>& groups,
                       const Json& manifest) {
    for (const auto& group : groups) {
        const Json* jgroup = nullptr;
        for (const auto& jg : manifest.at("groups"))
            if (jg.at("name") == group.name) jgroup = &jg;
        if (!jgroup) throw_runtime("checkpoint: missing group " + group.name);
        std::ifstream in(dir + "/" + jgroup->at("file").get<std::string>(), std::ios::binary);
        if (!in) throw_runtime("checkpoint: missing blob for group " + group.name);
        const auto& jparams = jgroup->at("params");
        FLOWSR_REQUIRE(jparams.size() == group.params.size(),
                       "checkpoint: group size mismatch for " + group.name);
        for (size_t i = 0; i < group.params.size(); ++i) {
            auto* p = group.params[i];
            const auto& jp = jparams[i];
            FLOWSR_REQUIRE(jp.at("name") == p->name, "checkpoint: param name mismatch");
            FLOWSR_REQUIRE(jp.at("count") == p->w.size(), "checkpoint: param size mismatch");
            std::vector<float> f32(p->w.size());
            in.read(reinterpret_cast<char*>(f32.data()),
                    static_cast<std::streamsize>(f32.size() * sizeof(float)));
            if (!in) throw_runtime("checkpoint: truncated blob for group " + group.name);
            for (size_t k = 0; k < f32.size(); ++k) p->w.v[k] = static_cast<double>(f32[k]);
        }
    }
}

void write_manifest(const std::string& dir, const Json& manifest) {
    fs::create_directories(dir);
    std::ofstream out(dir + "/manifest.json");
    if (!out) throw_runtime("write_manifest: cannot open " + dir);
    out << manifest.dump(2) << "\n";
}

Json read_manifest(const std::string& dir) {
    std::ifstream in(dir + "/manifest.json");
    if (!in) throw_runtime("read_manifest: missing manifest in " + dir);
    return Json::parse(in);
}

uint64_t checkpoint_content_hash(const std::string& dir) {
    std::vector<std::string> files;
    for (const auto& entry : fs::directory_iterator(dir))
        if (entry.path().extension() == ".bin") files.push_back(entry.path().string());
    std::sort(files.begin(), files.end());
    uint64_t h = kFnvOffset;
    for (const auto& f : files) {
        std::ifstream in(f, std::ios::binary);
        std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                                std::istreambuf_iterator<char>());
        h = fnv1a(bytes.data(), bytes.size(), h);
    }
    return h;
}

// ---------------------------------------------------------------------------
// Model-level save/load.
// ---------------------------------------------------------------------------

void save_autoencoder(const std::string& dir, AutoEncoder<double>& ae, Json extra) {
    Json manifest = std::move(extra);
    manifest["kind"] = "autoencoder";
    manifest["arch"] = Json{{"width", ae.enc.base_width},
                            {"latent_channels", ae.enc.latent_channels}};
    std::vector<ParamGroup> groups(2);
    groups[0].name = "encoder";
    ae.enc.collect_base(groups[0].params);
    groups[1].name = "decoder";
    ae.dec.collect_base(groups[1].params);
    save_param_groups(dir, groups, manifest);
    manifest["decoder_checksum"] = params_checksum(groups[1].params);
    write_manifest(dir, manifest);
}

AutoEncoder<double> load_autoencoder(const std::string& dir, Json* manifest_out) {
    const Json manifest = read_manifest(dir);
    FLOWSR_REQUIRE(manifest.at("kind") == "autoencoder", "not an autoencoder checkpoint");
    AutoEncoder<double> ae;
    Rng rng(0);
    ae.init(manifest.at("arch").at("width"), manifest.at("arch").at("latent_channels"), rng);
    std::vector<ParamGroup> groups(2);
    groups[0].name = "encoder";
    ae.enc.collect_base(groups[0].params);
    groups[1].name = "decoder";
    ae.dec.collect_base(groups[1].params);
    load_param_groups(dir, groups, manifest);
    if (manifest_out) *manifest_out = manifest;
    return ae;
}

void save_velocity_net(const std::string& dir, VelocityNet<double>& net, Json extra) {
    Json manifest = std::move(extra);
    manifest["kind"] = "velocity_net";
    manifest["arch"] = vnet_config_to_json(net.cfg);
    std::vector<ParamGroup> groups;
    ParamGroup base;
    base.name = "base";
    net.collect_base(base.params);
    groups.push_back(base);
    ParamGroup lora;
    lora.name = "lora";
    net.collect_lora(lora.params);
    if (!lora.params.empty()) {
        manifest["lora"] = Json{{"rank", net.conv_in.lora.rank},
                                {"scale", net.conv_in.lora.scale}};
        groups.push_back(lora);
    }
    save_param_groups(dir, groups, manifest);
    write_manifest(dir, manifest);
}

VelocityNet<double> load_velocity_net(const std::string& dir, Json* manifest_out) {
    const Json manifest = read_manifest(dir);
    FLOWSR_REQUIRE(manifest.at("kind") == "velocity_net", "not a velocity-net checkpoint");
    VelocityNet<double> net;
    Rng rng(0);
    net.init(vnet_config_from_json(manifest.at("arch")), rng);
    std::vector<ParamGroup> groups;
    ParamGroup base;
    base.name = "base";
    net.collect_base(base.params);
    groups.push_back(base);
    if (manifest.contains("lora")) {
        Rng lrng(1);
        net.set_base_trainable(false);
        net.attach_lora_all(manifest.at("lora").at("rank"),
                            manifest.at("lora").at("scale").get<double>(), lrng);
        ParamGroup lora;
        lora.name = "lora";
        net.collect_lora(lora.params);
        groups.push_back(lora);
    }
    load_param_groups(dir, groups, manifest);
    if (manifest_out) *manifest_out = manifest;
    return net;
}

void save_student(const std::string& dir, StudentModel<double>& student, Json extra) {
    Json manifest = std::move(extra);
    manifest["kind"] = "student";
    manifest["arch"] = Json{{"ae_width", student.encoder.base_width},
                            {"latent_channels", student.encoder.latent_channels},
                            {"denoiser", vnet_config_to_json(student.denoiser.cfg)},
                            {"lora_rank", student.encoder.c1.lora.rank},
                            {"lora_scale", student.encoder.c1.lora.scale},
                            {"upscale", student.upscale},
                            {"t_cond", student.t_cond}};
    std::vector<ParamGroup> groups(4);
    groups[0].name = "encoder_base";
    student.encoder.collect_base(groups[0].params);
    groups[1].name = "encoder_lora";
    student.encoder.collect_lora(groups[1].params);
    groups[2].name = "denoiser";
    student.denoiser.collect_base(groups[2].params);
    groups[3].name = "decoder";
    student.decoder.collect_base(groups[3].params);
    save_param_groups(dir, groups, manifest);
    manifest["decoder_checksum"] = params_checksum(groups[3].params);
    write_manifest(dir, manifest);
}

StudentModel<double> load_student(const std::string& dir, Json* manifest_out) {
    const Json manifest = read_manifest(dir);
    FLOWSR_REQUIRE(manifest.at("kind") == "student", "not a student checkpoint");
    const Json& arch = manifest.at("arch");
    AutoEncoder<double> ae;
    Rng rng(0);
    ae.init(arch.at("ae_width"), arch.at("latent_channels"), rng);
    StudentModel<double> student;
    student.init(ae, vnet_config_from_json(arch.at("denoiser")), arch.at("lora_rank"),
                 arch.at("lora_scale").get<double>(), arch.at("upscale"), arch.at("t_cond"),
                 /*seed=*/0);
    std::vector<ParamGroup> groups(4);
    groups[0].name = "encoder_base";
    student.encoder.collect_base(groups[0].params);
    groups[1].name = "encoder_lora";
    student.encoder.collect_lora(groups[1].params);
    groups[2].name = "denoiser";
    student.denoiser.collect_base(groups[2].params);
    groups[3].name = "decoder";
    student.decoder.collect_base(groups[3].params);
    load_param_groups(dir, groups, manifest);
    if (manifest_out) *manifest_out = manifest;
    return student;
}

}  // namespace flowsr
