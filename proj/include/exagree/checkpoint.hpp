#pragma once

#include <memory>
#include <string>

#include "exagree/model.hpp"

namespace exagree {

/// Versioned JSON container: config + vocabulary + flat parameter arrays.
/// save -> load -> save reproduces the file byte for byte.
void save_checkpoint(const Model& model, const std::string& path);
std::unique_ptr<Model> load_checkpoint(const std::string& path);

std::string checkpoint_to_string(const Model& model);
std::unique_ptr<Model> checkpoint_from_string(const std::string& text);

}  // namespace exagree
