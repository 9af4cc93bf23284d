"""Grammar-constrained tree generation with adversarial training."""
from .grammar import Grammar, GrammarError, build_mask, load_grammar, parse_grammar_text, palindrome_grammar
from .parse_tree import ActionSequence, ParseTree, actions_to_tree, tree_to_actions, yield_of
from .earley import ParseFailure, parse_sequence

__all__ = [
    "Grammar", "GrammarError", "build_mask", "load_grammar", "parse_grammar_text", "palindrome_grammar",
    "ActionSequence", "ParseTree", "actions_to_tree", "tree_to_actions", "yield_of",
    "ParseFailure", "parse_sequence",
]
__version__ = "0.1.0"
