//! Domain vocabularies used by the procedural generator.
//!
//! Each style names a domain and an ordered list of entity kinds. Earlier kinds
//! tend to be referenced by later ones (customers before bookings, and so on).

pub struct DomainStyle {
    pub name: &'static str,
    pub kinds: &'static [&'static str],
}

pub const STYLES: &[DomainStyle] = &[
    DomainStyle {
        name: "airline",
        kinds: &["customer", "flight", "booking", "seat", "payment", "baggage", "voucher", "loyalty_account"],
    },
    DomainStyle {
        name: "retail",
        kinds: &["customer", "product", "order", "shipment", "return_request", "coupon", "review", "cart"],
    },
    DomainStyle {
        name: "telecom",
        kinds: &["subscriber", "plan", "line", "device", "invoice", "ticket", "addon", "port_request"],
    },
    DomainStyle {
        name: "banking",
        kinds: &["client", "account", "card", "transfer", "loan", "statement", "dispute", "beneficiary"],
    },
    DomainStyle {
        name: "healthcare",
        kinds: &["patient", "provider", "appointment", "prescription", "claim", "referral", "lab_order", "coverage"],
    },
    DomainStyle {
        name: "hotel",
        kinds: &["guest", "room", "reservation", "folio", "amenity", "housekeeping_task", "rate_plan", "complaint"],
    },
    DomainStyle {
        name: "food_delivery",
        kinds: &["customer", "restaurant", "menu_item", "delivery_order", "courier", "promo", "rating", "refund"],
    },
    DomainStyle {
        name: "real_estate",
        kinds: &["client", "property", "listing", "viewing", "offer", "contract", "inspection", "agent"],
    },
    DomainStyle {
        name: "education",
        kinds: &[
            "student",
            "course",
            "enrollment",
            "assignment",
            "grade",
            "instructor",
            "tuition_bill",
            "transcript_request",
        ],
    },
    DomainStyle {
        name: "logistics",
        kinds: &["shipper", "warehouse", "pallet", "consignment", "route", "carrier", "customs_form", "pickup"],
    },
    DomainStyle {
        name: "insurance",
        kinds: &["policyholder", "policy", "claim", "adjuster", "premium_bill", "vehicle", "rider", "inspection"],
    },
    DomainStyle {
        name: "car_rental",
        kinds: &["renter", "vehicle", "rental", "branch", "damage_report", "invoice", "upgrade", "license_check"],
    },
    DomainStyle {
        name: "event_ticketing",
        kinds: &["attendee", "venue", "event", "ticket", "seat_block", "refund", "promoter", "waitlist_entry"],
    },
    DomainStyle {
        name: "human_resources",
        kinds: &[
            "employee",
            "department",
            "position",
            "leave_request",
            "payroll_run",
            "review",
            "benefit_plan",
            "expense_claim",
        ],
    },
    DomainStyle {
        name: "it_helpdesk",
        kinds: &["user", "asset", "incident", "change_request", "license", "article", "on_call_shift", "sla_policy"],
    },
    DomainStyle {
        name: "public_services",
        kinds: &["citizen", "permit", "application", "inspection", "fee", "appeal", "office", "document"],
    },
    DomainStyle {
        name: "utilities",
        kinds: &[
            "customer",
            "meter",
            "service_address",
            "bill",
            "outage_report",
            "payment_plan",
            "tariff",
            "work_order",
        ],
    },
    DomainStyle {
        name: "fitness",
        kinds: &["member", "gym", "class_session", "booking", "trainer", "membership_plan", "locker", "payment"],
    },
    DomainStyle {
        name: "library",
        kinds: &["patron", "book", "loan", "hold", "branch", "fine", "event", "acquisition_request"],
    },
    DomainStyle {
        name: "veterinary",
        kinds: &["owner", "pet", "visit", "vaccination", "prescription", "invoice", "boarding_stay", "lab_result"],
    },
    DomainStyle {
        name: "travel_agency",
        kinds: &["traveler", "itinerary", "hotel_booking", "tour", "visa_application", "quote", "transfer", "payment"],
    },
    DomainStyle {
        name: "manufacturing",
        kinds: &["supplier", "part", "purchase_order", "work_order", "machine", "quality_check", "batch", "shipment"],
    },
    DomainStyle {
        name: "legal_services",
        kinds: &["client", "case_file", "hearing", "document", "invoice", "attorney", "deadline", "retainer"],
    },
    DomainStyle {
        name: "streaming_media",
        kinds: &[
            "subscriber",
            "profile",
            "title",
            "watchlist_entry",
            "subscription",
            "device",
            "payment",
            "support_ticket",
        ],
    },
];

/// Non-status field columns a kind may carry.
pub enum FieldShape {
    Int,
    Enum(&'static [&'static str]),
    Text,
}

pub const FIELDS: &[(&str, FieldShape)] = &[
    ("amount", FieldShape::Int),
    ("quantity", FieldShape::Int),
    ("priority", FieldShape::Enum(&["low", "normal", "high", "urgent"])),
    ("channel", FieldShape::Enum(&["web", "phone", "app", "in_person"])),
    ("tier", FieldShape::Enum(&["basic", "standard", "premium"])),
    ("region", FieldShape::Enum(&["north", "south", "east", "west"])),
    ("note", FieldShape::Text),
    ("label", FieldShape::Text),
    ("duration", FieldShape::Int),
    ("rating", FieldShape::Int),
    ("reference_code", FieldShape::Text),
    ("currency", FieldShape::Enum(&["usd", "eur", "gbp", "jpy"])),
];

/// Status lifecycle shared by every entity table.
pub const STATUSES: &[&str] = &["created", "active", "confirmed", "on_hold", "cancelled"];
pub const STATUS_CREATED: &str = "created";
pub const STATUS_ACTIVE: &str = "active";
pub const STATUS_CANCELLED: &str = "cancelled";

/// Words used for synthesized text cells.
pub const WORDS: &[&str] = &[
    "amber", "birch", "cobalt", "delta", "ember", "fjord", "garnet", "harbor", "indigo", "juniper", "kestrel", "lumen",
    "maple", "nimbus", "onyx", "pepper", "quartz", "raven", "sierra", "tundra",
];

/// Alternate names for extra read-only lookups when a domain needs more tools.
pub const LOOKUP_VERBS: &[&str] = &["find", "inspect", "review", "check", "describe", "audit", "trace", "summarize"];

pub fn style(index: u32) -> &'static DomainStyle {
    &STYLES[index as usize % STYLES.len()]
}

/// Plural table name for an entity kind.
pub fn table_name(kind: &str) -> String {
    if kind.ends_with('s') || kind.ends_with('x') {
        format!("{kind}es")
    } else if let Some(stem) = kind.strip_suffix('y') {
        if stem.ends_with(['a', 'e', 'i', 'o', 'u']) {
            format!("{kind}s")
        } else {
            format!("{stem}ies")
        }
    } else {
        format!("{kind}s")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    #[test]
    fn at_least_twenty_distinct_domains() {
        let names: BTreeSet<_> = STYLES.iter().map(|s| s.name).collect();
        assert!(names.len() >= 20);
        assert_eq!(names.len(), STYLES.len());
    }

    #[test]
    fn every_style_has_eight_unique_kinds() {
        for s in STYLES {
            let kinds: BTreeSet<_> = s.kinds.iter().collect();
            assert_eq!(kinds.len(), 8, "{}", s.name);
        }
    }

    #[test]
    fn plurals() {
        assert_eq!(table_name("order"), "orders");
        assert_eq!(table_name("class_session"), "class_sessions");
        assert_eq!(table_name("policy"), "policies");
        assert_eq!(table_name("journey"), "journeys");
        assert_eq!(table_name("box"), "boxes");
    }
}
