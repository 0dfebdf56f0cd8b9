#pragma once

// Line-oriented toy IR standing in for compiled code, plus the two
// build-time passes: CPI instrumentation and the post-build binary scan.
// Grammar: docs/toy_ir.md.

#include <algorithm>
#include <cstdint>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "nanozone/digest.hpp"
#include "nanozone/error.hpp"

namespace nanozone {

enum class Op {
  kStoreFnPtr,    // store_fnptr dst fn sig
  kMemcpyInit,    // memcpy_init dst (fn:sig | _)...
  kBitcastStore,  // bitcast_store dst fn orig_sig
  kIcall,         // icall src sig
  kCall,          // call fn
  kRet,           // ret
  kGcsStore,      // gcsstr addr value
  kPorWrite,      // wrpor slot enc
  kPlain,         // plain op args...
  kPimBackup,     // pim_backup dst sig
  kPimCheck,      // pim_check src sig
};

struct OpInfo {
  Op op;
  std::string_view mnemonic;
  std::size_t min_args;
  std::size_t max_args;
};

inline constexpr OpInfo kOps[] = {
    {Op::kStoreFnPtr, "store_fnptr", 3, 3}, {Op::kMemcpyInit, "memcpy_init", 2, 64},
    {Op::kBitcastStore, "bitcast_store", 3, 3}, {Op::kIcall, "icall", 2, 2},
    {Op::kCall, "call", 1, 1},                {Op::kRet, "ret", 0, 0},
    {Op::kGcsStore, "gcsstr", 2, 2},          {Op::kPorWrite, "wrpor", 2, 2},
    {Op::kPlain, "plain", 1, 64},             {Op::kPimBackup, "pim_backup", 2, 2},
    {Op::kPimCheck, "pim_check", 2, 2},
};

inline const OpInfo& info(Op op) {
  for (const auto& i : kOps)
    if (i.op == op) return i;
  throw Error(ErrorCode::kMalformedProgram, "unknown opcode");
}

struct Instr {
  Op op = Op::kPlain;
  std::vector<std::string> args;
  bool trampoline = false;

  friend bool operator==(const Instr&, const Instr&) = default;
};

struct GlobalDecl {
  unsigned slot = 0;
  std::string fn;
  std::string sig;
  friend bool operator==(const GlobalDecl&, const GlobalDecl&) = default;
};

struct ToyProgram {
  std::vector<GlobalDecl> globals;
  std::vector<Instr> code;
  friend bool operator==(const ToyProgram&, const ToyProgram&) = default;
};

// The fnptr fields of a memcpy_init: (field index, fn, sig).
struct FnField {
  std::size_t index;
  std::string fn;
  std::string sig;
};

inline std::vector<FnField> fnptr_fields(const Instr& in) {
  std::vector<FnField> out;
  for (std::size_t i = 1; i < in.args.size(); ++i) {
    if (in.args[i] == "_") continue;
    const auto colon = in.args[i].find(':');
    out.push_back({i - 1, in.args[i].substr(0, colon), in.args[i].substr(colon + 1)});
  }
  return out;
}

inline std::string field_name(const std::string& dst, std::size_t index) {
  return dst + "." + std::to_string(index);
}

namespace detail {

inline std::vector<std::string> split_ws(std::string_view line) {
  std::vector<std::string> out;
  std::istringstream in{std::string(line)};
  for (std::string tok; in >> tok;) out.push_back(tok);
  return out;
}

[[noreturn]] inline void malformed(std::size_t line, const std::string& what) {
  throw Error(ErrorCode::kMalformedProgram, "line " + std::to_string(line) + ": " + what);
}

}  // namespace detail

inline ToyProgram parse_program(std::string_view text) {
  ToyProgram prog;
  bool in_tramp = false;
  std::size_t line_no = 0;
  std::istringstream in{std::string(text)};
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    auto toks = detail::split_ws(line);
    if (toks.empty()) continue;
    const std::string head = toks.front();
    toks.erase(toks.begin());
    if (head == ".trampoline_begin" || head == ".trampoline_end") {
      const bool begin = head == ".trampoline_begin";
      if (begin == in_tramp || !toks.empty()) detail::malformed(line_no, "unbalanced " + head);
      in_tramp = begin;
      continue;
    }
    if (head == ".global") {
      if (toks.size() != 3) detail::malformed(line_no, ".global takes slot fn sig");
      unsigned slot = 0;
      try {
        slot = static_cast<unsigned>(std::stoul(toks[0]));
      } catch (const std::exception&) {
        detail::malformed(line_no, "bad global slot '" + toks[0] + "'");
      }
      prog.globals.push_back({slot, toks[1], canonical_signature(toks[2])});
      continue;
    }
    const OpInfo* op = nullptr;
    for (const auto& i : kOps)
      if (i.mnemonic == head) op = &i;
    if (op == nullptr) detail::malformed(line_no, "unknown instruction '" + head + "'");
    if (toks.size() < op->min_args || toks.size() > op->max_args)
      detail::malformed(line_no, "wrong operand count for " + head);
    Instr instr{op->op, toks, in_tramp};
    if (op->op == Op::kMemcpyInit)
      for (std::size_t i = 1; i < toks.size(); ++i) {
        const auto colon = toks[i].find(':');
        if (toks[i] != "_" && (colon == std::string::npos || colon == 0 || colon + 1 == toks[i].size()))
          detail::malformed(line_no, "memcpy_init field must be fn:sig or _");
      }
    prog.code.push_back(std::move(instr));
  }
  if (in_tramp) detail::malformed(line_no, "missing .trampoline_end");
  return prog;
}

inline std::string print_program(const ToyProgram& prog) {
  std::string out;
  for (const auto& g : prog.globals)
    out += ".global " + std::to_string(g.slot) + " " + g.fn + " " + g.sig + "\n";
  bool in_tramp = false;
  for (const auto& in : prog.code) {
    if (in.trampoline != in_tramp) {
      out += in.trampoline ? ".trampoline_begin\n" : ".trampoline_end\n";
      in_tramp = in.trampoline;
    }
    out += info(in.op).mnemonic;
    for (const auto& a : in.args) out += " " + a;
    out += "\n";
  }
  if (in_tramp) out += ".trampoline_end\n";
  return out;
}

struct PassStats {
  std::size_t backups = 0;
  std::size_t checks = 0;
  std::size_t rewrites = 0;
  std::vector<std::string> log;
};

// Inserts a PIM backup before every store of a function pointer (including
// memcpy-initialized fields and bitcast sources) and a PIM check before every
// indirect call. Already-guarded sites are left alone, so the pass is
// idempotent. The trampoline is never instrumented.
inline ToyProgram instrument(const ToyProgram& prog, PassStats* stats = nullptr) {
  ToyProgram out{prog.globals, {}};
  PassStats local;
  PassStats& st = stats ? *stats : local;
  for (const auto& in : prog.code) {
    if (!in.trampoline) {
      // Guards already present directly above this instruction.
      std::set<std::pair<std::string, std::string>> guarded;
      for (auto it = out.code.rbegin(); it != out.code.rend(); ++it) {
        if (it->trampoline || (it->op != Op::kPimBackup && it->op != Op::kPimCheck)) break;
        guarded.emplace(it->args[0], it->args[1]);
      }
      auto guard = [&](Op op, const std::string& var, const std::string& sig) {
        const std::string canon = canonical_signature(sig);
        if (guarded.count({var, canon})) return;
        out.code.push_back({op, {var, canon}, false});
        ++(op == Op::kPimBackup ? st.backups : st.checks);
      };
      switch (in.op) {
        case Op::kStoreFnPtr:
        case Op::kBitcastStore: guard(Op::kPimBackup, in.args[0], in.args[2]); break;
        case Op::kMemcpyInit:
          for (const auto& f : fnptr_fields(in)) guard(Op::kPimBackup, field_name(in.args[0], f.index), f.sig);
          break;
        case Op::kIcall: guard(Op::kPimCheck, in.args[0], in.args[1]); break;
        default: break;
      }
    }
    out.code.push_back(in);
  }
  return out;
}

// Neutralizes privileged-looking instructions outside the trampoline: stray
// GCS stores become ordinary stores, stray POR_EL0 writes become no-ops.
inline ToyProgram binary_scan(const ToyProgram& prog, PassStats* stats = nullptr) {
  ToyProgram out = prog;
  PassStats local;
  PassStats& st = stats ? *stats : local;
  for (std::size_t i = 0; i < out.code.size(); ++i) {
    Instr& in = out.code[i];
    if (in.trampoline) continue;
    if (in.op == Op::kGcsStore) {
      st.log.push_back("instr " + std::to_string(i) + ": gcsstr -> plain str");
      in = {Op::kPlain, {"str", in.args[0], in.args[1]}, false};
      ++st.rewrites;
    } else if (in.op == Op::kPorWrite) {
      st.log.push_back("instr " + std::to_string(i) + ": wrpor " + in.args[0] + " " + in.args[1] +
                       " neutralized");
      in = {Op::kPlain, {"nop"}, false};
      ++st.rewrites;
    }
  }
  return out;
}

}  // namespace nanozone
