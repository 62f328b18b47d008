//! Cα-only reading and writing of PDB-format text.
//!
//! Reads the first model only. For atoms with alternate locations the conformer
//! with the highest occupancy wins (first seen on ties).

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geom::{Backbone, StructureRecord};

/// Consecutive Cα distance above which a chain break is flagged (Å).
pub const CHAIN_BREAK_DISTANCE: f64 = 4.5;

#[derive(Debug, Clone, PartialEq)]
pub struct IngestedChain {
    pub record: StructureRecord,
    pub chain_id: char,
    /// Indices `i` with a break between residues `i` and `i + 1`.
    pub breaks: Vec<usize>,
    /// B-factors as read, before any confidence interpretation.
    pub b_factors: Vec<f64>,
}

impl IngestedChain {
    pub fn has_breaks(&self) -> bool {
        !self.breaks.is_empty()
    }
}

#[derive(Debug, Clone)]
struct CaAtom {
    chain: char,
    res_key: (i64, char),
    altloc: char,
    occupancy: f64,
    b_factor: f64,
    xyz: [f64; 3],
}

fn field(line: &str, a: usize, b: usize) -> &str {
    let end = b.min(line.len());
    if a >= end {
        ""
    } else {
        line.get(a..end).unwrap_or("")
    }
}

fn parse_f64(line: &str, a: usize, b: usize, what: &str, lineno: usize) -> Result<f64> {
    field(line, a, b)
        .trim()
        .parse::<f64>()
        .map_err(|_| Error::Pdb(format!("line {lineno}: bad {what} field")))
}

fn parse_atoms(text: &str) -> Result<Vec<CaAtom>> {
    let mut atoms = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let lineno = n + 1;
        if line.starts_with("ENDMDL") {
            break;
        }
        if !(line.starts_with("ATOM  ") || line.starts_with("HETATM")) {
            continue;
        }
        if field(line, 12, 16).trim() != "CA" {
            continue;
        }
        // Calcium ions are HETATM "CA" with element CA; keep only amino-acid Cα.
        if line.starts_with("HETATM") && field(line, 76, 78).trim().eq_ignore_ascii_case("CA") {
            continue;
        }
        let chain = field(line, 21, 22).chars().next().unwrap_or(' ');
        let res_seq = field(line, 22, 26)
            .trim()
            .parse::<i64>()
            .map_err(|_| Error::Pdb(format!("line {lineno}: bad residue number")))?;
        let icode = field(line, 26, 27).chars().next().unwrap_or(' ');
        let altloc = field(line, 16, 17).chars().next().unwrap_or(' ');
        let xyz = [
            parse_f64(line, 30, 38, "x", lineno)?,
            parse_f64(line, 38, 46, "y", lineno)?,
            parse_f64(line, 46, 54, "z", lineno)?,
        ];
        let occupancy = field(line, 54, 60).trim().parse::<f64>().unwrap_or(1.0);
        let b_factor = field(line, 60, 66).trim().parse::<f64>().unwrap_or(0.0);
        atoms.push(CaAtom {
            chain,
            res_key: (res_seq, icode),
            altloc,
            occupancy,
            b_factor,
            xyz,
        });
    }
    Ok(atoms)
}

/// Chain ids with at least one Cα, in order of first appearance.
pub fn list_chains(text: &str) -> Result<Vec<char>> {
    let mut seen = Vec::new();
    for a in parse_atoms(text)? {
        if !seen.contains(&a.chain) {
            seen.push(a.chain);
        }
    }
    Ok(seen)
}

/// Parses PDB text into a Cα record.
pub fn parse_calpha(text: &str, chain: Option<char>, source_id: &str) -> Result<IngestedChain> {
    let atoms = parse_atoms(text)?;
    if atoms.is_empty() {
        return Err(Error::Pdb("no CA atoms found".into()));
    }
    let chains: BTreeSet<char> = atoms.iter().map(|a| a.chain).collect();
    let chain_id = match chain {
        Some(c) => {
            if !chains.contains(&c) {
                return Err(Error::Pdb(format!(
                    "chain '{c}' not present; available chains: {}",
                    chains.iter().collect::<String>()
                )));
            }
            c
        }
        None if chains.len() == 1 => *chains.iter().next().expect("one chain"),
        None => {
            return Err(Error::Pdb(format!(
                "multiple chains present, select one of: {}",
                chains.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(", ")
            )))
        }
    };
    // Residues in order of first appearance, keeping the best alternate location.
    let mut residues: Vec<CaAtom> = Vec::new();
    for a in atoms.into_iter().filter(|a| a.chain == chain_id) {
        match residues.iter_mut().find(|r| r.res_key == a.res_key) {
            Some(r) => {
                if a.altloc != ' ' && a.occupancy > r.occupancy {
                    *r = a;
                }
            }
            None => residues.push(a),
        }
    }
    let points: Vec<[f64; 3]> = residues.iter().map(|r| r.xyz).collect();
    let backbone = Backbone::from_points(&points)?;
    let b_factors: Vec<f64> = residues.iter().map(|r| r.b_factor).collect();
    let breaks: Vec<usize> = (0..backbone.len().saturating_sub(1))
        .filter(|&i| backbone.distance(i, i + 1) > CHAIN_BREAK_DISTANCE)
        .collect();
    let confidence = if b_factors.iter().all(|b| (0.0..=100.0).contains(b)) {
        Some(b_factors.clone())
    } else {
        log::warn!("{source_id}: B-factors outside [0, 100], confidence not stored");
        None
    };
    let record = StructureRecord::new(backbone, Vec::new(), source_id, confidence)?;
    Ok(IngestedChain {
        record,
        chain_id,
        breaks,
        b_factors,
    })
}

pub fn ingest_calpha(path: &Path, chain: Option<char>) -> Result<IngestedChain> {
    let text = std::fs::read_to_string(path)?;
    let id = path.file_stem().map_or_else(|| "structure".to_string(), |s| s.to_string_lossy().into_owned());
    parse_calpha(&text, chain, &id)
}

/// Cα-only PDB text with glycine residue names, chain A.
pub fn format_calpha_pdb(backbone: &Backbone, b_factors: Option<&[f64]>, remarks: &[String]) -> String {
    let mut out = String::new();
    for r in remarks {
        let _ = writeln!(out, "REMARK   1 {r}");
    }
    for i in 0..backbone.len() {
        let p = backbone.point(i);
        let b = b_factors.and_then(|b| b.get(i).copied()).unwrap_or(0.0);
        let _ = writeln!(
            out,
            "ATOM  {:>5}  CA  GLY A{:>4}    {:>8.3}{:>8.3}{:>8.3}{:>6.2}{:>6.2}           C",
            i + 1,
            i + 1,
            p.x,
            p.y,
            p.z,
            1.0,
            b
        );
    }
    let _ = writeln!(out, "TER   {:>5}      GLY A{:>4}", backbone.len() + 1, backbone.len());
    out.push_str("END\n");
    out
}

pub fn write_calpha_pdb(backbone: &Backbone, path: &Path, b_factors: Option<&[f64]>, remarks: &[String]) -> Result<()> {
    std::fs::write(path, format_calpha_pdb(backbone, b_factors, remarks))?;
    Ok(())
}
