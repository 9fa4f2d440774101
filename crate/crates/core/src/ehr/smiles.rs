//! SMILES parsing into heavy-atom molecule graphs.
//!
//! Supported subset: organic-subset atoms B, C, N, O, P, S, F, Cl, Br, I
//! (lowercase b/c/n/o/p/s for aromatic), single `-`, double `=`, triple `#`
//! and aromatic `:` bonds, ring closures `1`..`9` and `%nn`, and branches.
//! Hydrogens are implicit and not represented. Bracket atoms, charges and
//! stereochemistry are out of the subset and rejected with a position.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Atom element types the parser understands, used as embedding indices.
pub const ATOM_ELEMENTS: [&str; 10] = ["B", "C", "N", "O", "P", "S", "F", "Cl", "Br", "I"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BondKind {
    Single,
    Double,
    Triple,
    Aromatic,
}

impl BondKind {
    pub const COUNT: usize = 4;

    pub fn id(self) -> usize {
        match self {
            BondKind::Single => 0,
            BondKind::Double => 1,
            BondKind::Triple => 2,
            BondKind::Aromatic => 3,
        }
    }
}

/// Heavy-atom graph of one drug molecule. Bonds are stored once per pair
/// and traversed in both directions by the encoders.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MoleculeGraph {
    pub drug_code: String,
    /// Indices into [`ATOM_ELEMENTS`].
    pub atoms: Vec<usize>,
    /// `(i, j, bond kind)` with `i != j`.
    pub bonds: Vec<(usize, usize, BondKind)>,
}

impl MoleculeGraph {
    pub fn atom_count(&self) -> usize {
        self.atoms.len()
    }

    pub fn bond_count(&self) -> usize {
        self.bonds.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.atoms.is_empty() {
            return Err(Error::Data(format!("molecule {:?} has no atoms", self.drug_code)));
        }
        for &(i, j, _) in &self.bonds {
            if i == j || i >= self.atoms.len() || j >= self.atoms.len() {
                return Err(Error::Data(format!(
                    "molecule {:?} has invalid bond ({i}, {j})",
                    self.drug_code
                )));
            }
        }
        for &a in &self.atoms {
            if a >= ATOM_ELEMENTS.len() {
                return Err(Error::Data(format!(
                    "molecule {:?} has unknown atom type id {a}",
                    self.drug_code
                )));
            }
        }
        Ok(())
    }
}

fn element_id(sym: &str) -> Option<usize> {
    ATOM_ELEMENTS.iter().position(|&e| e == sym)
}

struct PendingRing {
    atom: usize,
    bond: Option<BondKind>,
    aromatic_atom: bool,
}

/// Parse a SMILES string over the supported subset.
pub fn parse_molecule(smiles: &str, drug_code: &str) -> Result<MoleculeGraph> {
    let bytes = smiles.as_bytes();
    let err = |pos: usize, msg: String| Error::MoleculeParse { position: pos, message: msg };

    let mut atoms: Vec<usize> = Vec::new();
    let mut aromatic_flags: Vec<bool> = Vec::new();
    let mut bonds: Vec<(usize, usize, BondKind)> = Vec::new();
    let mut stack: Vec<usize> = Vec::new();
    let mut prev: Option<usize> = None;
    let mut pending_bond: Option<BondKind> = None;
    let mut rings: std::collections::HashMap<u32, PendingRing> = std::collections::HashMap::new();

    let close_ring = |label: u32,
                          pos: usize,
                          atom: usize,
                          aromatic: bool,
                          pending_bond: &mut Option<BondKind>,
                          rings: &mut std::collections::HashMap<u32, PendingRing>,
                          bonds: &mut Vec<(usize, usize, BondKind)>|
     -> Result<()> {
        match rings.remove(&label) {
            Some(open) => {
                if open.atom == atom {
                    return Err(err(pos, format!("ring bond {label} closes on its own atom")));
                }
                let kind = pending_bond
                    .take()
                    .or(open.bond)
                    .unwrap_or(if open.aromatic_atom && aromatic {
                        BondKind::Aromatic
                    } else {
                        BondKind::Single
                    });
                bonds.push((open.atom, atom, kind));
            }
            None => {
                rings.insert(
                    label,
                    PendingRing { atom, bond: pending_bond.take(), aromatic_atom: aromatic },
                );
            }
        }
        Ok(())
    };

    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        match c {
            'A'..='Z' | 'a'..='z' => {
                // Two-letter symbols first: Cl and Br.
                let (sym, aromatic, advance) = if c == 'C' && bytes.get(i + 1) == Some(&b'l') {
                    ("Cl".to_string(), false, 2)
                } else if c == 'B' && bytes.get(i + 1) == Some(&b'r') {
                    ("Br".to_string(), false, 2)
                } else if c.is_ascii_uppercase() {
                    (c.to_string(), false, 1)
                } else {
                    (c.to_ascii_uppercase().to_string(), true, 1)
                };
                let elem = element_id(&sym)
                    .ok_or_else(|| err(i, format!("unsupported atom symbol {sym:?}")))?;
                if aromatic && !matches!(sym.as_str(), "B" | "C" | "N" | "O" | "P" | "S") {
                    return Err(err(i, format!("aromatic form of {sym:?} unsupported")));
                }
                let idx = atoms.len();
                atoms.push(elem);
                aromatic_flags.push(aromatic);
                if let Some(p) = prev {
                    let kind = pending_bond.take().unwrap_or(
                        if aromatic_flags[p] && aromatic { BondKind::Aromatic } else { BondKind::Single },
                    );
                    bonds.push((p, idx, kind));
                }
                prev = Some(idx);
                i += advance;
            }
            '-' | '=' | '#' | ':' => {
                if pending_bond.is_some() {
                    return Err(err(i, "two consecutive bond symbols".into()));
                }
                pending_bond = Some(match c {
                    '-' => BondKind::Single,
                    '=' => BondKind::Double,
                    '#' => BondKind::Triple,
                    _ => BondKind::Aromatic,
                });
                i += 1;
            }
            '1'..='9' => {
                let atom = prev.ok_or_else(|| err(i, "ring closure before any atom".into()))?;
                close_ring(
                    (c as u8 - b'0') as u32,
                    i,
                    atom,
                    aromatic_flags[atom],
                    &mut pending_bond,
                    &mut rings,
                    &mut bonds,
                )?;
                i += 1;
            }
            '%' => {
                let d1 = bytes.get(i + 1).map(|b| *b as char);
                let d2 = bytes.get(i + 2).map(|b| *b as char);
                match (d1, d2) {
                    (Some(a), Some(b)) if a.is_ascii_digit() && b.is_ascii_digit() => {
                        let label = (a as u32 - '0' as u32) * 10 + (b as u32 - '0' as u32);
                        let atom =
                            prev.ok_or_else(|| err(i, "ring closure before any atom".into()))?;
                        close_ring(
                            label,
                            i,
                            atom,
                            aromatic_flags[atom],
                            &mut pending_bond,
                            &mut rings,
                            &mut bonds,
                        )?;
                        i += 3;
                    }
                    _ => return Err(err(i, "'%' must be followed by two digits".into())),
                }
            }
            '(' => {
                let p = prev.ok_or_else(|| err(i, "branch open before any atom".into()))?;
                stack.push(p);
                i += 1;
            }
            ')' => {
                prev = Some(
                    stack
                        .pop()
                        .ok_or_else(|| err(i, "branch close without matching open".into()))?,
                );
                i += 1;
            }
            _ => return Err(err(i, format!("unsupported token {c:?}"))),
        }
    }

    if let Some(label) = rings.keys().next() {
        return Err(err(bytes.len(), format!("unclosed ring bond {label}")));
    }
    if !stack.is_empty() {
        return Err(err(bytes.len(), "unclosed branch".into()));
    }
    if pending_bond.is_some() {
        return Err(err(bytes.len(), "dangling bond symbol".into()));
    }
    if atoms.is_empty() {
        return Err(err(0, "no atoms in SMILES string".into()));
    }

    let graph = MoleculeGraph { drug_code: drug_code.to_string(), atoms, bonds };
    graph.validate()?;
    Ok(graph)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn methane_heavy_atom_graph() {
        let g = parse_molecule("C", "m0").unwrap();
        assert_eq!(g.atom_count(), 1);
        assert_eq!(g.bond_count(), 0);
    }

    #[test]
    fn ethane_single_bond() {
        let g = parse_molecule("CC", "m0").unwrap();
        assert_eq!(g.atom_count(), 2);
        assert_eq!(g.bonds, vec![(0, 1, BondKind::Single)]);
    }

    #[test]
    fn cyclohexane_ring_closure() {
        // Hand enumeration: chain bonds 0-1..4-5 plus the closure 0-5.
        let g = parse_molecule("C1CCCCC1", "m0").unwrap();
        assert_eq!(g.atom_count(), 6);
        assert_eq!(g.bond_count(), 6);
        assert!(g.bonds.contains(&(0, 5, BondKind::Single)));
    }

    #[test]
    fn benzene_aromatic_bonds() {
        let g = parse_molecule("c1ccccc1", "m0").unwrap();
        assert_eq!(g.atom_count(), 6);
        assert_eq!(g.bond_count(), 6);
        assert!(g.bonds.iter().all(|&(_, _, k)| k == BondKind::Aromatic));
    }

    #[test]
    fn branches_and_bond_orders() {
        // Isobutylene-ish: C(=O)N has a double bond inside the branch.
        let g = parse_molecule("CC(=O)N", "m0").unwrap();
        assert_eq!(g.atom_count(), 4);
        assert_eq!(g.bond_count(), 3);
        assert!(g.bonds.contains(&(1, 2, BondKind::Double)));
        assert!(g.bonds.contains(&(1, 3, BondKind::Single)));
    }

    #[test]
    fn two_letter_elements() {
        let g = parse_molecule("ClCBr", "m0").unwrap();
        assert_eq!(g.atom_count(), 3);
        assert_eq!(g.atoms[0], super::element_id("Cl").unwrap());
        assert_eq!(g.atoms[2], super::element_id("Br").unwrap());
    }

    #[test]
    fn unsupported_token_reports_position() {
        let err = parse_molecule("CC[Na]", "m0").unwrap_err();
        match err {
            Error::MoleculeParse { position, .. } => assert_eq!(position, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn unclosed_ring_rejected() {
        assert!(matches!(
            parse_molecule("C1CC", "m0").unwrap_err(),
            Error::MoleculeParse { .. }
        ));
    }

    /// Independent token-count oracle: heavy atoms are the element tokens;
    /// for a connected SMILES string, bonds = atoms - 1 + ring closures.
    fn token_count_oracle(smiles: &str) -> (usize, usize) {
        let bytes = smiles.as_bytes();
        let mut atoms = 0;
        let mut ring_digits = 0;
        let mut i = 0;
        while i < bytes.len() {
            let c = bytes[i] as char;
            if c == 'C' && bytes.get(i + 1) == Some(&b'l') {
                atoms += 1;
                i += 2;
            } else if c == 'B' && bytes.get(i + 1) == Some(&b'r') {
                atoms += 1;
                i += 2;
            } else if c.is_ascii_alphabetic() {
                atoms += 1;
                i += 1;
            } else if c.is_ascii_digit() {
                ring_digits += 1;
                i += 1;
            } else if c == '%' {
                ring_digits += 1;
                i += 3;
            } else {
                i += 1;
            }
        }
        (atoms, atoms - 1 + ring_digits / 2)
    }

    #[test]
    fn golden_set_matches_token_count_oracle() {
        let golden = [
            "C",
            "CC",
            "CCO",
            "CC(C)O",
            "C1CCCCC1",
            "c1ccccc1",
            "CC(=O)O",
            "CC(=O)Nc1ccc(O)cc1",
            "C#N",
            "N#CC",
            "O=C=O",
            "CCN(CC)CC",
            "C1CC1",
            "C1CCC1",
            "c1ccncc1",
            "OCC(O)CO",
            "CSC",
            "FC(F)F",
            "ClC(Cl)Cl",
            "CC(C)(C)O",
        ];
        for smiles in golden {
            let g = parse_molecule(smiles, "m").unwrap();
            let (atoms, bonds) = token_count_oracle(smiles);
            assert_eq!(g.atom_count(), atoms, "{smiles}: atom count");
            assert_eq!(g.bond_count(), bonds, "{smiles}: bond count");
        }
    }
}
