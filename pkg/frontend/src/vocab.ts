/**
 * Demographic survey vocabularies. The backend rejects answers outside these
 * closed lists, so the client validates against the same values before
 * sending anything.
 */

import type { Demographics } from "./api.js";

export const AGE_BUCKETS = ["Under 18", "18-29", "30-49", "50+", "Other"] as const;
export const GENDERS = ["Female", "Male", "Other"] as const;
export const EDUCATIONS = ["Grad", "PhD", "Other"] as const;
export const EMPLOYMENTS = ["Employed", "Unemployed", "Student", "Other"] as const;
export const CHANNELS = ["Authors", "LinkedIn", "Mailing", "Referral", "Other"] as const;

export interface SurveyField {
  key: keyof Demographics;
  label: string;
  options: readonly string[];
}

export const SURVEY_FIELDS: SurveyField[] = [
  { key: "age_bucket", label: "Age bracket", options: AGE_BUCKETS },
  { key: "gender", label: "Gender", options: GENDERS },
  { key: "education", label: "Education", options: EDUCATIONS },
  { key: "employment", label: "Employment", options: EMPLOYMENTS },
  { key: "channel", label: "How did you hear about this study?", options: CHANNELS },
];

/** One problem string per missing or out-of-vocabulary answer. */
export function validateDemographics(answers: Partial<Demographics>): string[] {
  const problems: string[] = [];
  for (const field of SURVEY_FIELDS) {
    const value = answers[field.key];
    if (value === undefined || value === "") {
      problems.push(`${field.label} is required`);
    } else if (!field.options.includes(value)) {
      problems.push(`${field.label}: "${value}" is not an allowed answer`);
    }
  }
  return problems;
}
