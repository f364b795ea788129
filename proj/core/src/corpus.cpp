#include <string_view>

namespace synth {

// Shakespeare, Sonnets 18, 29, 116 and 130 (1609, public domain).
std::string_view char_lm_corpus() {
  static constexpr std::string_view kText =
      "shall i compare thee to a summer's day?\n"
      "thou art more lovely and more temperate:\n"
      "rough winds do shake the darling buds of may,\n"
      "and summer's lease hath all too short a date;\n"
      "sometime too hot the eye of heaven shines,\n"
      "and often is his gold complexion dimm'd;\n"
      "and every fair from fair sometime declines,\n"
      "by chance or nature's changing course untrimm'd;\n"
      "but thy eternal summer shall not fade,\n"
      "nor lose possession of that fair thou ow'st;\n"
      "nor shall death brag thou wander'st in his shade,\n"
      "when in eternal lines to time thou grow'st:\n"
      "so long as men can breathe or eyes can see,\n"
      "so long lives this, and this gives life to thee.\n"
      "\n"
      "when, in disgrace with fortune and men's eyes,\n"
      "i all alone beweep my outcast state,\n"
      "and trouble deaf heaven with my bootless cries,\n"
      "and look upon myself and curse my fate,\n"
      "wishing me like to one more rich in hope,\n"
      "featured like him, like him with friends possess'd,\n"
      "desiring this man's art and that man's scope,\n"
      "with what i most enjoy contented least;\n"
      "yet in these thoughts myself almost despising,\n"
      "haply i think on thee, and then my state,\n"
      "like to the lark at break of day arising\n"
      "from sullen earth, sings hymns at heaven's gate;\n"
      "for thy sweet love remember'd such wealth brings\n"
      "that then i scorn to change my state with kings.\n"
      "\n"
      "let me not to the marriage of true minds\n"
      "admit impediments. love is not love\n"
      "which alters when it alteration finds,\n"
      "or bends with the remover to remove:\n"
      "o no! it is an ever-fixed mark\n"
      "that looks on tempests and is never shaken;\n"
      "it is the star to every wandering bark,\n"
      "whose worth's unknown, although his height be taken.\n"
      "love's not time's fool, though rosy lips and cheeks\n"
      "within his bending sickle's compass come;\n"
      "love alters not with his brief hours and weeks,\n"
      "but bears it out even to the edge of doom.\n"
      "if this be error and upon me proved,\n"
      "i never writ, nor no man ever loved.\n"
      "\n"
      "my mistress' eyes are nothing like the sun;\n"
      "coral is far more red than her lips' red;\n"
      "if snow be white, why then her breasts are dun;\n"
      "if hairs be wires, black wires grow on her head.\n"
      "i have seen roses damask'd, red and white,\n"
      "but no such roses see i in her cheeks;\n"
      "and in some perfumes is there more delight\n"
      "than in the breath that from my mistress reeks.\n"
      "i love to hear her speak, yet well i know\n"
      "that music hath a far more pleasing sound;\n"
      "i grant i never saw a goddess go;\n"
      "my mistress, when she walks, treads on the ground:\n"
      "and yet, by heaven, i think my love as rare\n"
      "as any she belied with false compare.\n";
  return kText;
}

}  // namespace synth
