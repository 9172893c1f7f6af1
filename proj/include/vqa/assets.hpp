#pragma once

#include <string_view>

// Versioned prompt assets from assets/<version>/, embedded at build time.
namespace vqa::assets {

std::string_view parse_prompt();
std::string_view fusion_prompt();
std::string_view version();

}  // namespace vqa::assets
