#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace lrds {

/// Stack protection scheme a process is built with.
///
/// Regular keeps return addresses on the one stack. SafeStackStyle and
/// AGStackStyle both run return addresses on a hidden safe stack addressed by
/// the ordinary stack pointer; they differ only in what else ends up on it.
/// ReturnStack keeps return addresses alone on a per-thread return stack
/// addressed through the dedicated register.
enum class Scheme { Regular, SafeStackStyle, AGStackStyle, ReturnStack };

/// How libraries linked into a ReturnStack process were built. Secure
/// libraries are instrumented, Aware ones are not but leave the dedicated
/// register alone, Compatible ones treat it as an ordinary callee-saved
/// register and may spill it.
enum class Libs { Secure, Aware, Compatible };

inline std::string_view to_string(Scheme s) {
  switch (s) {
    case Scheme::Regular: return "regular";
    case Scheme::SafeStackStyle: return "safestack";
    case Scheme::AGStackStyle: return "agstack";
    case Scheme::ReturnStack: return "returnstack";
  }
  return "?";
}

inline std::string_view to_string(Libs l) {
  switch (l) {
    case Libs::Secure: return "secure";
    case Libs::Aware: return "aware";
    case Libs::Compatible: return "compatible";
  }
  return "?";
}

inline Scheme parse_scheme(std::string_view s) {
  for (Scheme v : {Scheme::Regular, Scheme::SafeStackStyle, Scheme::AGStackStyle, Scheme::ReturnStack})
    if (to_string(v) == s) return v;
  throw std::invalid_argument("unknown scheme '" + std::string(s) + "'");
}

inline Libs parse_libs(std::string_view s) {
  for (Libs v : {Libs::Secure, Libs::Aware, Libs::Compatible})
    if (to_string(v) == s) return v;
  throw std::invalid_argument("unknown library mode '" + std::string(s) + "'");
}

/// Schemes whose return addresses live on a stack separate from RSP/SP.
inline bool has_hidden_stacks(Scheme s) { return s != Scheme::Regular; }

}  // namespace lrds
