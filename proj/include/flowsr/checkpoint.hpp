// Copyright (C) 2026 flowsr contributors
// SPDX-License-Identifier: Apache-2.0
//
// Checkpoints are directories: a JSON manifest (architecture, seeds, step,
// recorded metrics) plus one flat little-endian float32 blob per parameter
// group. Adapters are stored as their own groups, separate from base
// weights, so a wrap can re-attach them.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "flowsr/layers.hpp"
#include "flowsr/nets.hpp"

#include "json.hpp"

namespace flowsr {

using Json = nlohmann::json;

// FNV-1a over the raw double bit patterns of every parameter in order.
uint64_t params_checksum(const std::vector<Param<double>*>& params);

struct ParamGroup {
    std::string name;
    std::vector<Param<double>*> params;
};

void save_param_groups(const std::string& dir, const std::vector<ParamGroup>& groups,
                       Json& manifest);
void load_param_groups(const std::string& dir, const std::vector<ParamGroup>& groups,
                       const Json& manifest);

void write_manifest(const std::string& dir, const Json& manifest);
Json read_manifest(const std::string& dir);

// Content hash of a checkpoint directory's blobs, for run manifests.
uint64_t checkpoint_content_hash(const std::string& dir);

// Model-level helpers. Manifests carry the architecture so loads are
// self-contained.
void save_autoencoder(const std::string& dir, AutoEncoder<double>& ae, Json extra);
AutoEncoder<double> load_autoencoder(const std::string& dir, Json* manifest_out = nullptr);

void save_velocity_net(const std::string& dir, VelocityNet<double>& net, Json extra);
VelocityNet<double> load_velocity_net(const std::string& dir, Json* manifest_out = nullptr);

void save_student(const std::string& dir, StudentModel<double>& student, Json extra);
StudentModel<double> load_student(const std::string& dir, Json* manifest_out = nullptr);

}  // namespace flowsr
