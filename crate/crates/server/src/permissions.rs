//! Additive, default-deny access control.

use std::collections::BTreeSet;
use std::fmt;

use basinfo_core::model::{CatchmentId, SeriesId, StationId, UserId};
use serde::{Deserialize, Serialize};

/// Group every caller belongs to, including anonymous ones.
pub const PUBLIC_GROUP: &str = "public";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Action {
    ViewMetadata,
    ViewData,
    Download,
    Edit,
    Manage,
}

impl Action {
    pub const ALL: [Action; 5] = [
        Action::ViewMetadata,
        Action::ViewData,
        Action::Download,
        Action::Edit,
        Action::Manage,
    ];
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Subject {
    User(UserId),
    Group(String),
}

/// Anything a grant can name.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObjectRef {
    Series(SeriesId),
    Station(StationId),
    Asset(String),
    Catchment(CatchmentId),
    StudyArea(String),
}

impl fmt::Display for ObjectRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ObjectRef::Series(id) => write!(f, "series/{id}"),
            ObjectRef::Station(id) => write!(f, "station/{id}"),
            ObjectRef::Asset(id) => write!(f, "asset/{id}"),
            ObjectRef::Catchment(id) => write!(f, "catchment/{id}"),
            ObjectRef::StudyArea(id) => write!(f, "study-area/{id}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Grant {
    pub id: String,
    pub subject: Subject,
    pub object: ObjectRef,
    pub actions: BTreeSet<Action>,
}

/// Who is asking. Anonymous callers have no user and only the public group.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Principal {
    pub user: Option<UserId>,
    pub groups: Vec<String>,
    pub is_admin: bool,
}

impl Principal {
    pub fn anonymous() -> Self {
        Self::default()
    }

    fn matches(&self, subject: &Subject) -> bool {
        match subject {
            Subject::User(u) => self.user.as_ref() == Some(u),
            Subject::Group(g) => g == PUBLIC_GROUP || self.groups.iter().any(|m| m == g),
        }
    }
}

/// Allow iff the principal is an admin, owns the object, or some grant to
/// them (directly or through a group) on any object of `scope` includes
/// `action`. `scope` is the object followed by its containers.
pub fn check_permission(
    principal: &Principal,
    scope: &[ObjectRef],
    owner: Option<&UserId>,
    grants: &[Grant],
    action: Action,
) -> bool {
    if principal.is_admin {
        return true;
    }
    if owner.is_some() && owner == principal.user.as_ref() {
        return true;
    }
    grants
        .iter()
        .any(|g| g.actions.contains(&action) && scope.contains(&g.object) && principal.matches(&g.subject))
}
