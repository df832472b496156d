//===-- lrds/rewriter.hpp - Prologue/epilogue rewriting ---------*- C++ -*-===//
//
// Recognizes functions whose frame code is exactly what emit() produces for
// some shape, and re-emits it for the target scheme. Anything else (leaf
// functions without frame setup, tail calls, hand-written frames) is left
// alone and flagged, the same way an uninstrumented library would be.
//
//===----------------------------------------------------------------------===//
#pragma once

#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lrds/asm_parser.hpp"
#include "lrds/codegen.hpp"
#include "lrds/rng.hpp"

namespace lrds {

struct FrameMatch {
  FuncDesc desc;
  FrameKind kind = FrameKind::Regular;
};

/// The shape and frame kind whose emission the function's frame code
/// reproduces, if any.
std::optional<FrameMatch> recognize(const AsmFunction& f);

struct RewriteEntry {
  std::string function;
  bool rewritten = false;
  int delta = 0;          // instructions added (negative when removed)
  std::string reason;     // why a function was left alone
};

struct RewriteReport {
  ArchName arch = ArchName::X86_64;
  Scheme scheme = Scheme::ReturnStack;
  std::vector<RewriteEntry> entries;

  nlohmann::ordered_json to_json() const;
};

struct RewriteResult {
  std::vector<AsmFunction> funcs;
  RewriteReport report;
};

RewriteResult rewrite(const std::vector<AsmFunction>& funcs, ArchName arch, Scheme scheme);

/// A random function in regular form: emitted prologue, a body of one or
/// more "..." and calls, and the epilogue.
AsmFunction random_function(ArchName arch, Rng& rng, const std::string& name);

}  // namespace lrds
