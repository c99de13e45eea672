use std::fmt;

use crate::error::{Error, Result};

/// Primitive kernels. The set is closed; each kind carries three parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BaseKind {
    Linear,
    Periodic,
    GammaExponential,
}

impl BaseKind {
    pub const ALL: [BaseKind; 3] = [
        BaseKind::Linear,
        BaseKind::Periodic,
        BaseKind::GammaExponential,
    ];

    pub const ARITY: usize = 3;

    pub fn token(self) -> &'static str {
        match self {
            BaseKind::Linear => "LIN",
            BaseKind::Periodic => "PER",
            BaseKind::GammaExponential => "GE",
        }
    }

    pub fn from_token(token: &str) -> Option<Self> {
        BaseKind::ALL.into_iter().find(|k| k.token() == token)
    }

    pub fn index(self) -> usize {
        match self {
            BaseKind::Linear => 0,
            BaseKind::Periodic => 1,
            BaseKind::GammaExponential => 2,
        }
    }

    /// Domain of parameter `i`.
    pub fn domain(self, i: usize) -> ParamDomain {
        match (self, i) {
            (BaseKind::Linear, _) => ParamDomain::NonNegative,
            (BaseKind::Periodic | BaseKind::GammaExponential, 0) => ParamDomain::NonNegative,
            (BaseKind::GammaExponential, 2) => ParamDomain::Exponent,
            _ => ParamDomain::Positive,
        }
    }
}

/// Admissible range of a single kernel parameter.
///
/// The prior places mass only on strictly positive values (and on `(0, 2]`
/// for the gamma-exponential exponent); `NonNegative` slots additionally
/// accept zero for direct evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamDomain {
    NonNegative,
    Positive,
    Exponent,
}

impl ParamDomain {
    pub fn contains(self, x: f64) -> bool {
        match self {
            ParamDomain::NonNegative => x.is_finite() && x >= 0.0,
            ParamDomain::Positive => x.is_finite() && x > 0.0,
            ParamDomain::Exponent => x.is_finite() && x > 0.0 && x <= 2.0,
        }
    }

    fn describe(self) -> &'static str {
        match self {
            ParamDomain::NonNegative => "[0, inf)",
            ParamDomain::Positive => "(0, inf)",
            ParamDomain::Exponent => "(0, 2]",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Operator {
    Sum,
    Product,
    /// Sigmoidal switch from the left to the right child; `[location, width]`.
    ChangePoint([f64; 2]),
}

impl Operator {
    pub fn params(&self) -> &[f64] {
        match self {
            Operator::ChangePoint(p) => p,
            _ => &[],
        }
    }

    fn params_mut(&mut self) -> &mut [f64] {
        match self {
            Operator::ChangePoint(p) => p,
            _ => &mut [],
        }
    }

    pub fn domain(&self, i: usize) -> ParamDomain {
        if i == 0 {
            ParamDomain::NonNegative
        } else {
            ParamDomain::Positive
        }
    }

    pub fn same_kind(&self, other: &Operator) -> bool {
        std::mem::discriminant(self) == std::mem::discriminant(other)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn index(self) -> usize {
        match self {
            Side::Left => 0,
            Side::Right => 1,
        }
    }
}

/// Sequence of left/right steps from the root; empty is the root.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TreePath(pub Vec<Side>);

impl TreePath {
    pub fn root() -> Self {
        TreePath(Vec::new())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn child(&self, side: Side) -> Self {
        let mut steps = self.0.clone();
        steps.push(side);
        TreePath(steps)
    }

    pub fn join(&self, tail: &TreePath) -> Self {
        let mut steps = self.0.clone();
        steps.extend_from_slice(&tail.0);
        TreePath(steps)
    }

    pub fn steps(&self) -> &[Side] {
        &self.0
    }
}

impl From<Vec<Side>> for TreePath {
    fn from(steps: Vec<Side>) -> Self {
        TreePath(steps)
    }
}

impl fmt::Display for TreePath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("[")?;
        for (i, s) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            f.write_str(match s {
                Side::Left => "L",
                Side::Right => "R",
            })?;
        }
        f.write_str("]")
    }
}

/// Covariance-kernel expression; immutable once built, all edits return new trees.
#[derive(Clone, Debug, PartialEq)]
pub enum KernelExpr {
    Base { kind: BaseKind, params: [f64; 3] },
    Node {
        op: Operator,
        children: Box<[KernelExpr; 2]>,
    },
}

impl KernelExpr {
    pub fn base(kind: BaseKind, params: [f64; 3]) -> Self {
        KernelExpr::Base { kind, params }
    }

    pub fn linear(p: [f64; 3]) -> Self {
        Self::base(BaseKind::Linear, p)
    }

    pub fn periodic(p: [f64; 3]) -> Self {
        Self::base(BaseKind::Periodic, p)
    }

    pub fn gamma_exp(p: [f64; 3]) -> Self {
        Self::base(BaseKind::GammaExponential, p)
    }

    pub fn node(op: Operator, left: KernelExpr, right: KernelExpr) -> Self {
        KernelExpr::Node {
            op,
            children: Box::new([left, right]),
        }
    }

    pub fn sum(left: KernelExpr, right: KernelExpr) -> Self {
        Self::node(Operator::Sum, left, right)
    }

    pub fn product(left: KernelExpr, right: KernelExpr) -> Self {
        Self::node(Operator::Product, left, right)
    }

    pub fn change_point(location: f64, width: f64, left: KernelExpr, right: KernelExpr) -> Self {
        Self::node(Operator::ChangePoint([location, width]), left, right)
    }

    pub fn is_base(&self) -> bool {
        matches!(self, KernelExpr::Base { .. })
    }

    /// Parameters owned by this node alone.
    pub fn node_params(&self) -> &[f64] {
        match self {
            KernelExpr::Base { params, .. } => params,
            KernelExpr::Node { op, .. } => op.params(),
        }
    }

    fn node_params_mut(&mut self) -> &mut [f64] {
        match self {
            KernelExpr::Base { params, .. } => params,
            KernelExpr::Node { op, .. } => op.params_mut(),
        }
    }

    fn node_domain(&self, i: usize) -> ParamDomain {
        match self {
            KernelExpr::Base { kind, .. } => kind.domain(i),
            KernelExpr::Node { op, .. } => op.domain(i),
        }
    }

    /// Number of AST nodes, operators and leaves alike.
    pub fn node_count(&self) -> usize {
        match self {
            KernelExpr::Base { .. } => 1,
            KernelExpr::Node { children, .. } => {
                1 + children[0].node_count() + children[1].node_count()
            }
        }
    }

    /// Total continuous parameter count d(k).
    pub fn param_count(&self) -> usize {
        match self {
            KernelExpr::Base { .. } => BaseKind::ARITY,
            KernelExpr::Node { op, children } => {
                op.params().len() + children[0].param_count() + children[1].param_count()
            }
        }
    }

    /// Depth of the tree; a single base kernel has depth 1.
    pub fn depth(&self) -> usize {
        match self {
            KernelExpr::Base { .. } => 1,
            KernelExpr::Node { children, .. } => {
                1 + children[0].depth().max(children[1].depth())
            }
        }
    }

    pub fn contains(&self, kind: BaseKind) -> bool {
        match self {
            KernelExpr::Base { kind: k, .. } => *k == kind,
            KernelExpr::Node { children, .. } => {
                children[0].contains(kind) || children[1].contains(kind)
            }
        }
    }

    /// Paths to every node in preorder.
    pub fn node_paths(&self) -> Vec<TreePath> {
        fn walk(e: &KernelExpr, prefix: &mut Vec<Side>, out: &mut Vec<TreePath>) {
            out.push(TreePath(prefix.clone()));
            if let KernelExpr::Node { children, .. } = e {
                for side in [Side::Left, Side::Right] {
                    prefix.push(side);
                    walk(&children[side.index()], prefix, out);
                    prefix.pop();
                }
            }
        }
        let mut out = Vec::with_capacity(self.node_count());
        walk(self, &mut Vec::new(), &mut out);
        out
    }

    pub fn get(&self, path: &TreePath) -> Result<&KernelExpr> {
        let mut cur = self;
        for side in path.steps() {
            match cur {
                KernelExpr::Node { children, .. } => cur = &children[side.index()],
                KernelExpr::Base { .. } => return Err(self.path_error(path)),
            }
        }
        Ok(cur)
    }

    fn get_mut(&mut self, path: &TreePath) -> Option<&mut KernelExpr> {
        let mut cur = self;
        for side in path.steps() {
            match cur {
                KernelExpr::Node { children, .. } => cur = &mut children[side.index()],
                KernelExpr::Base { .. } => return None,
            }
        }
        Some(cur)
    }

    fn path_error(&self, path: &TreePath) -> Error {
        Error::Path {
            path: path.clone(),
            expr: self.to_string(),
        }
    }

    /// Subtree rooted at `path`, by value.
    pub fn subtree_extract(&self, path: &TreePath) -> Result<KernelExpr> {
        self.get(path).cloned()
    }

    /// New tree with the subtree at `path` replaced by `sub`.
    pub fn subtree_replace_at(&self, path: &TreePath, sub: KernelExpr) -> Result<KernelExpr> {
        let mut out = self.clone();
        match out.get_mut(path) {
            Some(slot) => {
                *slot = sub;
                Ok(out)
            }
            None => Err(self.path_error(path)),
        }
    }

    /// Flattened parameters in canonical preorder.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        self.collect_params(None, &mut Vec::new(), &mut out);
        out
    }

    /// Parameter domains aligned with [`KernelExpr::params`].
    pub fn param_domains(&self) -> Vec<ParamDomain> {
        let mut out = Vec::with_capacity(self.param_count());
        self.walk_nodes(None, &mut Vec::new(), &mut |node| {
            for i in 0..node.node_params().len() {
                out.push(node.node_domain(i));
            }
        });
        out
    }

    /// Parameters of every node outside the subtree at `path`, in preorder.
    pub fn params_outside(&self, path: &TreePath) -> Result<Vec<f64>> {
        self.get(path)?;
        let mut out = Vec::new();
        self.collect_params(Some(path.steps()), &mut Vec::new(), &mut out);
        Ok(out)
    }

    pub fn param_domains_outside(&self, path: &TreePath) -> Result<Vec<ParamDomain>> {
        self.get(path)?;
        let mut out = Vec::new();
        self.walk_nodes(Some(path.steps()), &mut Vec::new(), &mut |node| {
            for i in 0..node.node_params().len() {
                out.push(node.node_domain(i));
            }
        });
        Ok(out)
    }

    fn collect_params(&self, skip: Option<&[Side]>, prefix: &mut Vec<Side>, out: &mut Vec<f64>) {
        self.walk_nodes(skip, prefix, &mut |node| out.extend_from_slice(node.node_params()));
    }

    fn walk_nodes(
        &self,
        skip: Option<&[Side]>,
        prefix: &mut Vec<Side>,
        visit: &mut dyn FnMut(&KernelExpr),
    ) {
        if skip == Some(prefix.as_slice()) {
            return;
        }
        visit(self);
        if let KernelExpr::Node { children, .. } = self {
            for side in [Side::Left, Side::Right] {
                prefix.push(side);
                children[side.index()].walk_nodes(skip, prefix, visit);
                prefix.pop();
            }
        }
    }

    fn walk_nodes_mut(
        &mut self,
        skip: Option<&[Side]>,
        prefix: &mut Vec<Side>,
        visit: &mut dyn FnMut(&mut KernelExpr),
    ) {
        if skip == Some(prefix.as_slice()) {
            return;
        }
        visit(self);
        if let KernelExpr::Node { children, .. } = self {
            for side in [Side::Left, Side::Right] {
                prefix.push(side);
                children[side.index()].walk_nodes_mut(skip, prefix, visit);
                prefix.pop();
            }
        }
    }

    fn assign_params(&mut self, skip: Option<&[Side]>, values: &[f64]) -> Result<()> {
        let mut cursor = 0usize;
        let mut overflow = false;
        self.walk_nodes_mut(skip, &mut Vec::new(), &mut |node| {
            for p in node.node_params_mut() {
                match values.get(cursor) {
                    Some(v) => *p = *v,
                    None => overflow = true,
                }
                cursor += 1;
            }
        });
        if overflow || cursor != values.len() {
            return Err(Error::Contract(format!(
                "expected {cursor} parameters, got {}",
                values.len()
            )));
        }
        Ok(())
    }

    /// Same structure with parameters replaced (canonical order).
    pub fn with_params(&self, values: &[f64]) -> Result<KernelExpr> {
        let mut out = self.clone();
        out.assign_params(None, values)?;
        Ok(out)
    }

    /// Same structure with the parameters outside `path` replaced.
    pub fn with_params_outside(&self, path: &TreePath, values: &[f64]) -> Result<KernelExpr> {
        self.get(path)?;
        let mut out = self.clone();
        out.assign_params(Some(path.steps()), values)?;
        Ok(out)
    }

    /// Checks every parameter against its domain.
    pub fn validate(&self) -> Result<()> {
        let mut bad = None;
        self.walk_nodes(None, &mut Vec::new(), &mut |node| {
            if bad.is_some() {
                return;
            }
            for (i, &p) in node.node_params().iter().enumerate() {
                let dom = node.node_domain(i);
                if !dom.contains(p) {
                    bad = Some(format!(
                        "parameter {} of {} is {p}, outside {}",
                        i + 1,
                        node.head_token(),
                        dom.describe()
                    ));
                    return;
                }
            }
        });
        match bad {
            Some(msg) => Err(Error::InvalidArgument(msg)),
            None => Ok(()),
        }
    }

    fn head_token(&self) -> &'static str {
        match self {
            KernelExpr::Base { kind, .. } => kind.token(),
            KernelExpr::Node { op, .. } => match op {
                Operator::Sum => "+",
                Operator::Product => "*",
                Operator::ChangePoint(_) => "CP",
            },
        }
    }

    /// True when both trees have the same shape and node kinds, ignoring parameters.
    pub fn same_structure(&self, other: &KernelExpr) -> bool {
        match (self, other) {
            (KernelExpr::Base { kind: a, .. }, KernelExpr::Base { kind: b, .. }) => a == b,
            (
                KernelExpr::Node { op: a, children: ca },
                KernelExpr::Node { op: b, children: cb },
            ) => a.same_kind(b) && ca[0].same_structure(&cb[0]) && ca[1].same_structure(&cb[1]),
            _ => false,
        }
    }

    /// Structural equality with bitwise parameter comparison.
    pub fn bitwise_eq(&self, other: &KernelExpr) -> bool {
        self.same_structure(other)
            && self
                .params()
                .iter()
                .zip(other.params())
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    /// Rendering without parameters, e.g. `(LIN + PER)`.
    pub fn structure_string(&self) -> String {
        match self {
            KernelExpr::Base { kind, .. } => kind.token().to_string(),
            KernelExpr::Node { op, children } => {
                let (l, r) = (children[0].structure_string(), children[1].structure_string());
                match op {
                    Operator::Sum => format!("({l} + {r})"),
                    Operator::Product => format!("({l} * {r})"),
                    Operator::ChangePoint(_) => format!("CP({l}; {r})"),
                }
            }
        }
    }

    pub fn children(&self) -> Option<&[KernelExpr; 2]> {
        match self {
            KernelExpr::Node { children, .. } => Some(children),
            KernelExpr::Base { .. } => None,
        }
    }
}
