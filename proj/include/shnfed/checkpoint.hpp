// Copyright 2026 The shnfed Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// JSON checkpoints of a hypernetwork federation. Doubles are written with
// round-trip precision, so save -> load is bit-exact.

#pragma once

#include <filesystem>
#include <string>

#include "shnfed/federation.hpp"

namespace shnfed {

std::string checkpoint_json(const Federation& federation);

/// Overwrites parameters, optimizer state, round counter, fixed embeddings
/// and graph of a federation built from the same configuration. Mismatched
/// variants, names or shapes are an InputError.
void restore_checkpoint_json(const std::string& text, Federation& federation);

void save_checkpoint(const std::filesystem::path& path, const Federation& federation);
void load_checkpoint(const std::filesystem::path& path, Federation& federation);

}  // namespace shnfed
