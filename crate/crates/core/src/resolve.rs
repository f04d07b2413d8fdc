//! Static resolution of the target component and its dependency call sites.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::ast::{path_under, AstForest, AstKind, AstLocation, AstNode, Iid};
use crate::error::ResolveError;

/// The four user inputs naming the component under study.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TargetSpec {
    pub component_name: String,
    pub component_file: String,
    pub production_dir: String,
    pub test_dir: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Dependency {
    pub name: String,
    pub qualified_name: String,
    pub decl: Iid,
    pub file: String,
    pub sites: Vec<Iid>,
}

/// Resolution report: target location, dependencies with call sites, and the
/// location sets used by the dynamic analyses.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallSiteSet {
    #[serde(rename = "loc_C")]
    pub target_loc: AstLocation,
    #[serde(rename = "targetDecl")]
    pub target_decl: Iid,
    pub deps: Vec<Dependency>,
    #[serde(rename = "L_T")]
    pub test_locs: Vec<AstLocation>,
    #[serde(rename = "L_D")]
    pub site_locs: Vec<AstLocation>,
    #[serde(default)]
    pub diagnostics: Vec<String>,
}

impl CallSiteSet {
    /// |S|, the total number of call sites.
    pub fn site_count(&self) -> usize {
        self.deps.iter().map(|d| d.sites.len()).sum()
    }

    pub fn site_iids(&self) -> impl Iterator<Item = Iid> + '_ {
        self.deps.iter().flat_map(|d| d.sites.iter().copied())
    }

    pub fn dependency_of_site(&self, iid: Iid) -> Option<&Dependency> {
        self.deps.iter().find(|d| d.sites.contains(&iid))
    }

    pub fn to_json_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

fn decl_label(forest: &AstForest, decl: &AstNode) -> String {
    let file = forest.file_of(decl.iid).unwrap_or("?");
    format!("{}@{}:{}", decl.qualified_name().unwrap_or("?"), file, decl.span)
}

/// Finds the unique declaration of the component in its file.
pub fn resolve_target(forest: &AstForest, spec: &TargetSpec) -> Result<AstLocation, ResolveError> {
    if spec.component_name.trim().is_empty() {
        return Err(ResolveError::InvalidTarget("component name is empty".into()));
    }
    if !path_under(&spec.component_file, &spec.production_dir) {
        return Err(ResolveError::InvalidTarget(format!(
            "component file {} is not under {}",
            spec.component_file, spec.production_dir
        )));
    }
    let file = forest
        .file(&spec.component_file)
        .ok_or_else(|| ResolveError::NotFound(format!("{} (no file {})", spec.component_name, spec.component_file)))?;
    let mut matches = Vec::new();
    file.root.walk(&mut |n| {
        if n.kind == AstKind::FunctionDecl && !n.is_test() && n.qualified_name() == Some(spec.component_name.as_str()) {
            matches.push(n);
        }
    });
    match matches.as_slice() {
        [] => Err(ResolveError::NotFound(spec.component_name.clone())),
        [one] => Ok(AstLocation {
            file: file.path.clone(),
            span: one.span,
        }),
        many => Err(ResolveError::Ambiguous {
            name: spec.component_name.clone(),
            candidates: many.iter().map(|d| decl_label(forest, d)).collect(),
        }),
    }
}

/// The FunctionDecl whose span is exactly `loc`.
pub fn decl_at(forest: &AstForest, loc: &AstLocation) -> Option<Iid> {
    let file = forest.file(&loc.file)?;
    let mut found = None;
    file.root.walk(&mut |n| {
        if found.is_none() && n.kind == AstKind::FunctionDecl && n.span == loc.span {
            found = Some(n.iid);
        }
    });
    found
}

/// Call and `new` expressions directly inside `node`, not descending into nested declarations.
fn direct_calls<'a>(node: &'a AstNode, out: &mut Vec<&'a AstNode>) {
    for child in &node.children {
        if child.kind == AstKind::FunctionDecl {
            continue;
        }
        if matches!(child.kind, AstKind::CallExpr | AstKind::NewExpr) {
            out.push(child);
        }
        direct_calls(child, out);
    }
}

enum Resolution<'a> {
    Decl(&'a AstNode),
    Ambiguous(Vec<&'a AstNode>),
    External,
}

struct DeclIndex<'a> {
    forest: &'a AstForest,
    all: Vec<&'a AstNode>,
    nested: Vec<&'a AstNode>,
    target_file: &'a str,
}

impl<'a> DeclIndex<'a> {
    fn pick(&self, found: Vec<&'a AstNode>) -> Option<Resolution<'a>> {
        match found.len() {
            0 => None,
            1 => Some(Resolution::Decl(found[0])),
            _ => Some(Resolution::Ambiguous(found)),
        }
    }

    fn by_qualified_name(&self, qname: &str) -> Resolution<'a> {
        let matching = |n: &&&AstNode| n.qualified_name() == Some(qname);
        let nested: Vec<_> = self.nested.iter().filter(matching).copied().collect();
        if let Some(r) = self.pick(nested) {
            return r;
        }
        let local: Vec<_> = self
            .all
            .iter()
            .filter(matching)
            .filter(|n| self.forest.file_of(n.iid).ok() == Some(self.target_file))
            .copied()
            .collect();
        if let Some(r) = self.pick(local) {
            return r;
        }
        let global: Vec<_> = self.all.iter().filter(matching).copied().collect();
        self.pick(global).unwrap_or(Resolution::External)
    }

    fn by_method_name(&self, name: &str) -> Resolution<'a> {
        let found: Vec<_> = self
            .all
            .iter()
            .filter(|n| n.attr_str("owner").is_some() && n.name() == Some(name))
            .copied()
            .collect();
        self.pick(found).unwrap_or(Resolution::External)
    }

    fn resolve_callee(&self, callee: &AstNode) -> Resolution<'a> {
        match callee.kind {
            AstKind::NameExpr => self.by_qualified_name(callee.name().unwrap_or("")),
            AstKind::AttributeExpr => {
                let method = callee.name().unwrap_or("");
                let object = &callee.children[0];
                if object.kind == AstKind::NameExpr {
                    let qname = format!("{}.{}", object.name().unwrap_or(""), method);
                    if let r @ (Resolution::Decl(_) | Resolution::Ambiguous(_)) = self.by_qualified_name(&qname) {
                        return r;
                    }
                }
                self.by_method_name(method)
            }
            _ => Resolution::External,
        }
    }
}

/// Walks the component body and collects dependency call sites.
pub fn resolve_call_sites(forest: &AstForest, loc_c: &AstLocation) -> Result<CallSiteSet, ResolveError> {
    let target_decl =
        decl_at(forest, loc_c).ok_or_else(|| ResolveError::NotFound(format!("declaration at {loc_c}")))?;
    let target = forest.node(target_decl)?;
    let mut all = Vec::new();
    for file in forest.files() {
        file.root.walk(&mut |n| {
            if n.kind == AstKind::FunctionDecl && !n.is_test() {
                all.push(n);
            }
        });
    }
    let mut nested = Vec::new();
    target.walk(&mut |n| {
        if n.kind == AstKind::FunctionDecl && n.iid != target_decl {
            nested.push(n);
        }
    });
    let index = DeclIndex {
        forest,
        all,
        nested,
        target_file: &loc_c.file,
    };

    let mut calls = Vec::new();
    direct_calls(target, &mut calls);
    let mut deps: BTreeMap<Iid, Dependency> = BTreeMap::new();
    let mut order: Vec<Iid> = Vec::new();
    let mut diagnostics = Vec::new();
    for call in calls {
        match index.resolve_callee(&call.children[0]) {
            Resolution::Decl(decl) if decl.iid == target_decl => {
                diagnostics.push(format!("call site {} is self-recursive; excluded", call.iid));
            }
            Resolution::Decl(decl) if index.nested.iter().any(|n| n.iid == decl.iid) => {
                diagnostics.push(format!(
                    "call site {} targets a helper nested in the component; not a dependency",
                    call.iid
                ));
            }
            Resolution::Decl(decl) => {
                let dep = deps.entry(decl.iid).or_insert_with(|| {
                    order.push(decl.iid);
                    Dependency {
                        name: decl.name().unwrap_or("").to_string(),
                        qualified_name: decl.qualified_name().unwrap_or("").to_string(),
                        decl: decl.iid,
                        file: forest.file_of(decl.iid).unwrap_or("").to_string(),
                        sites: Vec::new(),
                    }
                });
                dep.sites.push(call.iid);
            }
            Resolution::Ambiguous(cands) => {
                let labels: Vec<String> = cands.iter().map(|d| decl_label(forest, d)).collect();
                diagnostics.push(format!(
                    "call site {} matches several declarations {}; excluded",
                    call.iid,
                    labels.join(", ")
                ));
            }
            Resolution::External => {}
        }
    }
    let deps: Vec<Dependency> = order
        .into_iter()
        .map(|iid| deps.remove(&iid).expect("dependency recorded"))
        .collect();
    let mut site_locs = Vec::new();
    for site in deps.iter().flat_map(|d| &d.sites) {
        site_locs.push(forest.iid_to_location(*site)?);
    }
    Ok(CallSiteSet {
        target_loc: loc_c.clone(),
        target_decl,
        deps,
        test_locs: Vec::new(),
        site_locs,
        diagnostics,
    })
}

/// Locations of every flagged test declaration under `test_dir`, in source order.
pub fn collect_test_locations(forest: &AstForest, test_dir: &str) -> Vec<AstLocation> {
    let mut out = Vec::new();
    for file in forest.files().iter().filter(|f| path_under(&f.path, test_dir)) {
        file.root.walk(&mut |n| {
            if n.kind == AstKind::FunctionDecl && n.is_test() {
                out.push(AstLocation {
                    file: file.path.clone(),
                    span: n.span,
                });
            }
        });
    }
    out
}

/// Step one in full: target, call sites, and test locations.
pub fn resolve(forest: &AstForest, spec: &TargetSpec) -> Result<CallSiteSet, ResolveError> {
    let loc_c = resolve_target(forest, spec)?;
    let mut sites = resolve_call_sites(forest, &loc_c)?;
    sites.test_locs = collect_test_locations(forest, &spec.test_dir);
    Ok(sites)
}
