#pragma once

#include <string_view>

// Text assets under assets/, compiled in at build time.
namespace forge::assets {

std::string_view translation_prompt();
std::string_view sft_instruction();
std::string_view default_runners();

}  // namespace forge::assets
