#pragma once
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <boost/multiprecision/cpp_int.hpp>

#include "wk/tree.hpp"

namespace wk {

using Rational = boost::multiprecision::cpp_rational;

// ---------------------------------------------------------------------------
// Molecules: directed multigraphs distilled from couples. Each atom stands
// for a 4-node block (a branching node plus its three children); bonds join
// blocks that share a node (parent/child link, label 'P') or that hold the
// two halves of a leaf pair (label 'L'). Two paired sibling leaves give a
// self-loop. Atom and bond ids are arbitrary positive integers and survive
// removals unchanged.
// ---------------------------------------------------------------------------

struct Bond {
  int id = -1;
  int from = -1, to = -1;  // atom ids; from == to is a self-loop
  char label = 'L';        // 'P' parent/child, 'L' leaf pair, 'X' synthetic (reduction)
  // Slot codes, -1 when absent: 0 means the block's own branching node,
  // 1/2/3 the left/mid/right child slot. molecule_of fills them in; they are
  // what decode_molecule needs to rebuild the couple.
  int code_from = -1, code_to = -1;
};

struct Molecule {
  std::vector<int> atoms;   // ascending, unique
  std::vector<Bond> bonds;  // ascending id

  bool has_atom(int v) const;
  const Bond* bond(int id) const;  // nullptr when absent

  int degree(int v) const;  // a self-loop contributes 2
  int out_degree(int v) const;
  int in_degree(int v) const;
  std::vector<int> bonds_at(int v) const;                // bond ids, ascending
  std::vector<int> bonds_between(int u, int v) const;    // unordered endpoints
  std::vector<int> neighbors(int v) const;               // distinct, ascending, v excluded
  std::vector<std::vector<int>> components() const;      // atom id lists, each ascending
  int component_count() const;
  // Atoms of the component containing v, optionally pretending some atoms
  // were deleted (used by step preconditions that probe the post-removal
  // picture before committing).
  std::vector<int> component_of(int v, const std::set<int>& without = {}) const;
  bool is_bridge(int bond_id) const;  // removal splits its component

  void remove_bond(int bond_id);
  void remove_atom(int v);  // drops incident bonds too
  void add_bond(const Bond& b);

  // Structural legality: endpoints exist, ids unique, at most 2 outgoing and
  // 2 incoming per atom (self-loop counts once each way), at most one
  // self-loop per atom, at most a triple bond between two atoms, and no
  // saturated component (every atom of degree 4). Throws invalid_argument.
  void validate() const;
};

// Scalar shape data feeding the reduction bookkeeping.
struct MoleculeAnalysis {
  int chi = 0;       // bonds - atoms + components
  int eta = 0;       // V3 + 2 V2 + 3 V1 + 4 V0 - 4 F
  int eta_star = 0;  // V3 + 2 V2 + 2 V1 + 2 V0 - 2 F
  std::vector<int> bridges;        // bond ids whose removal splits a component
  // Single bonds with degree-3 endpoints where each endpoint also carries a
  // double bond to a third atom (the two third atoms distinct).
  std::vector<int> special_bonds;
  // Maximal runs of double bonds whose two halves point opposite ways;
  // reported when at least two atoms long. Cycles start at their least atom.
  std::vector<std::vector<int>> type_i_chains;
  // Maximal ladders: double-bonded atom pairs linked by two single bonds of
  // opposite orientation; reported when at least two pairs long.
  std::vector<std::vector<std::pair<int, int>>> type_ii_chains;
  // Atoms carrying a self-loop: their two loop halves force equal decoration
  // values, so the counting problem is empty unless they are degenerate.
  std::vector<int> must_be_degenerate;
};
MoleculeAnalysis analyze(const Molecule& m);

// Base molecule of a nontrivial couple: one atom per branching node (atom id
// = the node's global id), one 'P' bond per non-root branching node and one
// 'L' bond per leaf pair not touching a trivial-tree root. n atoms and 2n-1
// bonds at scale n. Slot codes are filled in. Throws on the trivial couple.
Molecule molecule_of(const Couple& q);

// Rebuild the couple from a coded molecule. Returns nullopt when codes are
// missing or inconsistent; it declines rather than guess.
std::optional<Couple> decode_molecule(const Molecule& m);

// ---------------------------------------------------------------------------
// Reduction: dismantle a molecule step by step down to isolated atoms,
// keeping per-step score increments (gamma for the lattice-point budget,
// kappa for the resonance-width budget) and the extra decoration conditions
// (Ext) each branch of the analysis relies on. Steps at a checkpoint come in
// complementary pairs, so the union of the produced tracks still covers
// every decoration.
// ---------------------------------------------------------------------------

struct ExtCondition {
  enum class Kind { Eq, Good, NotAll };
  Kind kind = Kind::Eq;
  // Eq: decorations of bonds a and b are equal. Good: their difference is a
  // good (generic-direction) vector; symmetric, so a < b is normalized.
  int a = -1, b = -1;
  // NotAll: the negation of the conjunction of the atomic conditions below.
  std::vector<ExtCondition> sub;

  bool operator==(const ExtCondition&) const = default;
};
std::string ext_to_string(const ExtCondition& c);

struct ReduceStep {
  std::string name;  // "(DA)", "(BR)", "(3S3-1)", ...
  std::vector<int> removed_atoms;
  std::vector<int> removed_bonds;
  std::vector<Bond> added_bonds;
  int dV = 0, dE = 0, dF = 0, dChi = 0;
  Rational dGamma = 0, dKappa = 0;
  // good = the gamma increment sits at least 1/(6(d-1)) above dChi; normal
  // steps have dGamma == dChi exactly.
  bool good = false;
  std::vector<ExtCondition> delta_ext;
  // Bond substitution applied to later conditions when this step introduced
  // a bond: occurrences of renew_new in the accumulated Ext are rewritten to
  // renew_old while accumulating backwards. -1 when unused.
  int renew_new = -1, renew_old = -1;
  int checkpoint = -1;  // fork ordinal when this step was one of two choices
  std::string note;
};

struct Track {
  std::vector<ReduceStep> steps;
  // Budgets at the start of the track, accumulated from the terminal state
  // (gamma = kappa = 0 there) backwards.
  Rational gamma = 0, kappa = 0;
  std::vector<ExtCondition> ext;  // conditions in force at the start
  int good_steps = 0;
  int checkpoints = 0;
  // A forced contradiction (equal decorations across a saturated triple
  // bond) empties the decoration set; such a track is reported with its
  // partial log and zero budgets instead of a terminal state.
  bool vacuous = false;
  std::string vacuous_reason;
};

// Dismantles m. degenerate lists the atoms whose decoration is pinned by the
// counting problem; they go first (degree-4 ones before the rest) and every
// self-loop atom must be among them. d >= 2 fixes the good-step margin
// 1/(6(d-1)). The input must carry no triple bond. Checkpoints fork, so up
// to 2^(#checkpoints) tracks come back, first choices first. Throws
// invalid_argument on bad inputs and logic_error (with the step log) if a
// step precondition breaks mid-run.
std::vector<Track> reduce(const Molecule& m, const std::set<int>& degenerate, int d);

// sup #D <= C^cplus_exponent * delta^(-kappa) * L^(L_exponent); the constant
// C stays symbolic. Vacuous tracks bound an empty set, reported as 1.
struct CountBound {
  int cplus_exponent = 0;
  Rational kappa = 0;
  Rational L_exponent = 0;  // (d-1) * gamma
};
CountBound predicted_bound(const Track& t, int d);

// ---------------------------------------------------------------------------
// Serialization. JSON schema (docs/formats.md): {"atoms":[int...],
// "bonds":[{"id","from","to","label":"PC"|"LP","code_from"?,"code_to"?}]}.
// ---------------------------------------------------------------------------

std::string molecule_to_json(const Molecule& m);
Molecule molecule_from_json(const std::string& text);
std::string track_to_json(const Track& t);
std::string molecule_to_dot(const Molecule& m);

}  // namespace wk
