use corpus_annotate::records::ExampleRecord;

fn rec(
    source: &str,
    title: &str,
    authors: Option<&str>,
    finding: &str,
    quote: Option<&str>,
    commentary: &str,
    page: Option<u32>,
) -> ExampleRecord {
    ExampleRecord {
        source_doc_id: source.into(),
        title: title.into(),
        authors: authors.map(String::from),
        finding: finding.into(),
        quote: quote.map(String::from),
        commentary: commentary.into(),
        page,
        batch_index: 0,
        verification: None,
        quality_label: None,
    }
}

/// Twenty records in canonical form. The first five are worked examples
/// re-typed from a real annotation run.
pub fn canonical_records() -> Vec<ExampleRecord> {
    vec![
        rec(
            "",
            "From Mennicke Symbols to Euler Class Groups (van der Kallen 2000)",
            None,
            "An analogy with topology is cited as providing an explanation for an algebraic structure.",
            Some(r"Let us now take $A$ to be the Banach algebra of continuous real valued functions on some finite $d$-dimensional CW complex $X$. Then one knows that for $n\ge3$ the orbit set $\mathrm{Um}_{n}(A)/E_{n}(A)$ is in bijective correspondence with the set $[X,\mathbb{R}^{n}-0]$ of homotopy classes of maps from $X$ to $\mathbb{R}^{n}-0=\mathrm{Um}_{n}(\mathbb{R})$. This gives a topological explanation why for $2\le d\le2n-4$ one has a group structure on $\mathrm{Um}_{n}(A)/E_{n}(A)$"),
            "Discussing orbit sets over Banach algebras $A=C(X)$. The author explicitly labels the connection to homotopy theory as a “topological explanation” for the existence of a group structure.",
            Some(10),
        ),
        rec(
            "",
            "Formulas of Verlinde Type for Non-Simply Connected Groups (Alekseev et al. 2000)",
            None,
            "Page 1 (Introduction): States the motivation is to apply the fixed point formula from the companion paper to understand Verlinde's formula for geometric quantization of moduli spaces, connecting index theory on loop group spaces to formulas arising in conformal field theory and algebraic geometry.",
            Some("In this paper we give applications of the fixed point formula proved in the companion paper. Our original motivation was to understand a formula of E. Verlinde for the geometric quantization of the moduli space of flat connections on a Riemann surface. In particular A. Szenes suggested to us that the Verlinde formula should follow from an equivariant index theorem, much as the Weyl or Steinberg formulas can be interpreted as fixed point formulas for flag varieties"),
            "This explicitly frames the work as seeking an explanation (“understand a formula of E. Verlinde”) by deriving it from a more general principle (equivariant index theorem / fixed point formula), thus providing deeper insight into the Verlinde formula's origins and connections, explaining why it holds.",
            Some(1),
        ),
        rec(
            "",
            "Modular Data: The Algebraic Combinatorics of Conformal Field Theory (Gannon 2002)",
            None,
            "Discussion of seeking underlying reasons for observed patterns.",
            Some(r"Patterns such as A-D-E are usually explained by identifying an underlying combinatorial fact which is responsible for its various incarnations. The A-D-E combinatorial fact is probably the classification of symmetric matrices over $\mathbb{Z}_{\geq}$ ... Perhaps the only A-D-E classification which still resists this ‘explanation’ is that of $A_{1}^{(1)}$ modular invariants"),
            r"The author discusses the recurrence of A-D-E classification schemes in various mathematical contexts and notes that these patterns are typically *explained* by finding a common underlying combinatorial structure. The quote highlights the search for such an explanation for the $A_{1}^{(1)}$ modular invariants, noting it as a current explanatory gap.",
            Some(29),
        ),
        rec(
            "",
            "Composition Sum Identities Related to the Distribution of Coordinate Values in a Discrete Simplex (Milson 2000)",
            None,
            "Explaining the reason behind a mathematical property (exact solvability) by relating it to a known structure or equivalence.",
            Some("Interesting composition sum identities will appear in the present context when we consider exactly-solvable differential equations. We present three such examples below, and discuss the enumerative interpretations in the next section. In each case the exact solvability comes about because the equation is gauge-equivalent to either the hypergeometric, or the confluent hypergeometric equation"),
            "Introducing three examples of second-order differential equations whose series solutions lead to composition sum identities (Propositions 4.2, 4.3, 4.4). The author explains *why* these specific equations are exactly solvable, attributing it to their gauge-equivalence to standard, well-understood hypergeometric equations.",
            Some(8),
        ),
        rec(
            "",
            "Combinatorial Formulas for Products of Thom Classes (Guillemin & Zara 2000)",
            None,
            "The authors are discussing the organization of the paper and highlighting a particularly interesting aspect of their formula (1.11) for Thom classes in equivariant cohomology.",
            Some(r"In Section 5 we will attempt to demystify what is perhaps the most puzzling feature of the formula (1.11), the fact that all the summands are rational functions (elements of the quotient field, $Q(\mathfrak{g}^{*})$), whereas the sum itself is a polynomial. This indicates that a lot of mysterious cancellations are occurring in this summation; and we will show *how* these cancellations occur in a few simple but enlightening examples"),
            "The terms “demystify”, “puzzling feature”, “mysterious cancellations”, and “enlightening examples” strongly indicate a concern for explanation. The authors acknowledge that the formula, while correct, has a feature that lacks immediate understanding (why rational functions sum to a polynomial). They explicitly aim to provide insight into the *reason why* this happens by analyzing the cancellation mechanism in simple cases, moving beyond just knowing *that* the formula yields a polynomial to understanding *how/why* it does. This aligns with seeking explanatory understanding and revealing underlying mechanisms.",
            Some(6),
        ),
        rec(
            "math0003117",
            "On Orbit Sets",
            Some("W. van der Kallen"),
            "Desire to understand a mysterious construction better.",
            Some("We want to understand the homomorphism and the subgroup in other ways."),
            "Explicit wish for a second, more illuminating construction.",
            Some(2),
        ),
        rec(
            "math0101001",
            "A Surprising Fact",
            Some("J. Doe, R. Roe"),
            "A topological reason is given for an algebraic fact.",
            Some("The reason for this fact, at first glance quite surprising, is of a topological nature."),
            "",
            None,
        ),
        rec(
            "math0204011",
            "Common Mechanisms",
            None,
            "Revealing a common mechanism.",
            Some("I hope to exhibit the common mechanism underlying these identities."),
            "Revealing common mechanisms is often explanatory.",
            Some(3),
        ),
        rec(
            "math0312001",
            "Unified Explanations",
            Some("A. N. Other"),
            "Explicit explanatory gap.",
            Some("We do not know of an argument which provides a unified explanation of both cases."),
            "States an explanatory failure.",
            Some(17),
        ),
        rec(
            "math9901123",
            "A record without a quote",
            None,
            "The model described a finding but gave no supporting quote.",
            None,
            "Kept so the omission is visible downstream.",
            None,
        ),
        rec(
            "math9902001",
            "Page but no quote",
            None,
            "Only a page reference survived.",
            None,
            "The quote was lost in formatting.",
            Some(44),
        ),
        rec(
            "math9903002",
            "Multi-line values",
            None,
            "A finding spread\nover two lines.",
            Some("First line of the quote\nand its second line"),
            "Commentary paragraph one.\n\nCommentary paragraph two after a blank line.",
            Some(5),
        ),
        rec(
            "cs0104005",
            "Cross-listed paper",
            Some("Ada Lovelace"),
            "A proof is praised as conceptual rather than computational.",
            Some("The conceptual proof shows why the bound holds, whereas the computation merely verifies it."),
            "Contrast between why and that.",
            Some(12),
        ),
        rec(
            "math0008123",
            "Quotes inside the quote",
            None,
            "Nested quotation marks survive.",
            Some("“Why” is the right question here, not “whether”"),
            "The outer quotes belong to the renderer; the inner ones to the author.",
            Some(9),
        ),
        rec(
            "math0011222",
            "Ünïcödé títle with ligatures ﬁxed",
            Some("Émile Borel"),
            "Non-ASCII text passes through.",
            Some("Die Erklärung liegt in der Struktur der Gruppe."),
            "German-language quote.",
            None,
        ),
        rec(
            "math0105099",
            "Title: with a colon",
            None,
            "Finding mentions a colon: like this.",
            Some("A reproof is given for a better understanding: the original proof was opaque."),
            "Context with colon: still one field.",
            Some(1),
        ),
        rec(
            "math0206007",
            "",
            None,
            "Record without a title.",
            Some("This explains the appearance of the golden ratio."),
            "",
            Some(3),
        ),
        rec(
            "math0309010",
            "Symbols",
            None,
            "Quote with operators and brackets.",
            Some(r"Since $f(x) = \sum_{n} a_n x^n$ [see (2.1)] the coefficients explain the growth rate"),
            "Brackets and parentheses in the quote.",
            Some(21),
        ),
        rec(
            "math0410011",
            "Only a finding",
            None,
            "A finding with nothing else.",
            None,
            "",
            None,
        ),
        rec(
            "math0512012",
            "Long authors list",
            Some("A. One, B. Two, C. Three, D. Four and E. Five"),
            "Five authors.",
            Some("The deeper reason is representation-theoretic"),
            "Deeper reason phrase.",
            Some(100),
        ),
    ]
}
